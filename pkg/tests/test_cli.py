"""Command-line pipeline: config parsing, stages, artifacts, exit codes."""

import csv
import hashlib

import pytest

from romuq import cli
from romuq.config import RunConfig, config_to_dict, load_config
from romuq.conformal import CvPlus, Split, Vanilla
from romuq.errors import NumericalError, UsageError

PIPELINE_INI = """\
[dataset]
n_samples = 24
n_bins = 16
t_end_s = 60
dt_s = 10
seed = 11

[conformal]
methods = vanilla, split, cv_plus
targets = reconstruction, latent_dynamics
alphas = 0.1, 0.2
cv_folds = 3
"""

MINI_INI = """\
[dataset]
n_samples = 12
n_bins = 8
t_end_s = 30
dt_s = 10
seed = 4

[conformal]
methods = vanilla
targets = reconstruction
alphas = 0.2
"""

STAGES = ("generate", "train", "calibrate", "evaluate", "report")


def _run_pipeline(ini_path, out_dir, stages=STAGES):
    for stage in stages:
        rc = cli.main([stage, "--config", str(ini_path), "--out", str(out_dir)])
        assert rc == 0, f"stage {stage} exited {rc}"


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestRunConfig:
    def test_default_run_settings(self):
        config = RunConfig()
        assert config.n_samples == 618
        assert config.n_bins == 64
        assert config.alphas == (0.1, 0.05, 0.02, 0.01)
        assert config.methods == ("vanilla", "split", "cv_plus")
        assert config.targets == (
            "reconstruction", "latent_dynamics", "end_to_end",
        )
        assert config.cv_folds == 20
        assert config.backend == "pod"
        grid = config.time_grid()
        assert grid.n_steps == 61
        assert grid.dt == 10.0
        bins = config.bin_grid()
        assert bins.n_bins == 64

    def test_method_scheme_mapping(self):
        config = RunConfig()
        assert config.method_scheme("vanilla") == Vanilla(train_frac=0.8)
        assert config.method_scheme("split") == Split(0.6, 0.2)
        assert config.method_scheme("cv_plus") == CvPlus(0.8, 20)
        with pytest.raises(UsageError, match="unknown method"):
            config.method_scheme("bootstrap")

    def test_validation(self):
        with pytest.raises(UsageError, match="at least 2"):
            RunConfig(n_samples=1)
        with pytest.raises(UsageError, match="integer multiple"):
            RunConfig(t_end_s=25.0, dt_s=10.0)
        with pytest.raises(UsageError, match="alpha"):
            RunConfig(alphas=(0.1, 1.5))
        with pytest.raises(UsageError, match="duplicate alphas"):
            RunConfig(alphas=(0.1, 0.1))
        with pytest.raises(UsageError, match="unknown method"):
            RunConfig(methods=("vanilla", "loo"))
        with pytest.raises(UsageError, match="unknown target"):
            RunConfig(targets=("reconstruction", "everything"))
        with pytest.raises(UsageError, match="backend"):
            RunConfig(backend="gp")

    def test_config_to_dict_is_json_ready(self):
        out = config_to_dict(RunConfig())
        assert out["alphas"] == [0.1, 0.05, 0.02, 0.01]
        assert out["methods"] == ["vanilla", "split", "cv_plus"]
        assert out["out_dir"] == "romuq_out"
        assert out["n_samples"] == 618


class TestLoadConfig:
    def test_no_file_gives_defaults(self):
        assert load_config(None) == RunConfig()

    def test_ini_values_are_coerced(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(PIPELINE_INI)
        config = load_config(ini)
        assert config.n_samples == 24
        assert config.n_bins == 16
        assert config.t_end_s == 60.0
        assert config.methods == ("vanilla", "split", "cv_plus")
        assert config.targets == ("reconstruction", "latent_dynamics")
        assert config.alphas == (0.1, 0.2)
        assert config.cv_folds == 3
        # untouched keys keep their defaults
        assert config.kernel_kind == "constant"
        assert config.train_frac == 0.8

    def test_overrides_beat_the_file(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        config = load_config(ini, {"seed": 99, "out_dir": "elsewhere"})
        assert config.seed == 99
        assert config.out_dir == "elsewhere"
        assert config.n_samples == 12

    def test_unknown_section_rejected(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[simulation]\nn_samples = 5\n")
        with pytest.raises(UsageError, match="unknown config section"):
            load_config(ini)

    def test_unknown_key_rejected(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[dataset]\nn_sample = 5\n")
        with pytest.raises(UsageError, match="unknown key"):
            load_config(ini)

    def test_unparseable_value_rejected(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[dataset]\nn_samples = many\n")
        with pytest.raises(UsageError, match="cannot parse"):
            load_config(ini)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(UsageError, match="cannot read config file"):
            load_config(tmp_path / "absent.ini")

    def test_malformed_file_rejected(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("n_samples = 5\n")  # key before any section header
        with pytest.raises(UsageError, match="malformed config file"):
            load_config(ini)


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """The full stage sequence run twice from one config, in two out dirs."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    ini = root / "run.ini"
    ini.write_text(PIPELINE_INI)
    out_a, out_b = root / "a", root / "b"
    _run_pipeline(ini, out_a)
    _run_pipeline(ini, out_b)
    return ini, out_a, out_b


class TestPipelineArtifacts:
    def test_expected_files_exist(self, pipeline_dirs):
        _, out, _ = pipeline_dirs
        assert (out / "dataset.bin").exists()
        for method in ("vanilla", "split", "cv_plus"):
            assert (out / f"model_{method}.bin").exists()
            for target in ("reconstruction", "latent_dynamics"):
                for tag in ("0p1", "0p2"):
                    name = f"calib_{method}_{target}_alpha{tag}.bin"
                    assert (out / name).exists(), name
                assert (out / f"widths_{method}_{target}.svg").exists()
            assert (out / f"width_panel_{method}.svg").exists()
        for fold in (1, 2, 3):
            assert (out / f"model_cv_plus_fold{fold:02d}.bin").exists()
        # only the cross-validation method stores fold models
        assert not list(out.glob("model_vanilla_fold*.bin"))
        for name in ("coverage.csv", "summary.csv", "widths.csv", "report.txt"):
            assert (out / name).exists()

    def test_reruns_are_bitwise_identical_and_location_free(self, pipeline_dirs):
        # artifact headers embed the configuration but not the output
        # directory, so two runs in different places must agree byte for byte
        _, out_a, out_b = pipeline_dirs
        names = sorted(p.name for p in out_a.iterdir())
        assert names == sorted(p.name for p in out_b.iterdir())
        for name in names:
            assert _sha(out_a / name) == _sha(out_b / name), name

    def test_summary_covers_every_combination(self, pipeline_dirs):
        _, out, _ = pipeline_dirs
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        combos = {
            (row["method"], row["target"], float(row["alpha"])) for row in rows
        }
        expected = {
            (m, t, a)
            for m in ("vanilla", "split", "cv_plus")
            for t in ("reconstruction", "latent_dynamics")
            for a in (0.1, 0.2)
        }
        assert combos == expected
        assert len(rows) == len(expected)
        for row in rows:
            assert 0.0 <= float(row["mean"]) <= 1.0

    def test_coverage_coordinates_by_target(self, pipeline_dirs):
        _, out, _ = pipeline_dirs
        with open(out / "coverage.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        latent = {
            int(r["coordinate"]) for r in rows if r["target"] == "latent_dynamics"
        }
        assert latent == {-1}
        bins = {
            int(r["coordinate"]) for r in rows if r["target"] == "reconstruction"
        }
        assert bins == set(range(16))

    def test_width_kinds_by_target(self, pipeline_dirs):
        _, out, _ = pipeline_dirs
        with open(out / "widths.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        kinds = {(r["target"], r["width_kind"]) for r in rows}
        assert kinds == {
            ("reconstruction", "band_integral"),
            ("reconstruction", "band_integral_mass_scaled"),
            ("latent_dynamics", "ellipsoid_volume"),
            ("latent_dynamics", "ellipsoid_geometry"),
        }

    def test_report_tables(self, pipeline_dirs):
        _, out, _ = pipeline_dirs
        text = (out / "report.txt").read_text()
        assert "empirical coverage, mean +/- std over cells (percent)" in text
        assert "empirical coverage, median over cells (percent)" in text
        assert "90%" in text and "80%" in text
        for method in ("vanilla", "split", "cv_plus"):
            assert method in text


class TestStageOrderingAndFreshness:
    def test_train_requires_dataset(self, tmp_path, capsys):
        rc = cli.main(["train", "--out", str(tmp_path)])
        assert rc == 2
        assert "run the generate stage first" in capsys.readouterr().err

    def test_calibrate_requires_model(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        _run_pipeline(ini, tmp_path / "out", stages=("generate",))
        rc = cli.main(["calibrate", "--config", str(ini), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "run the train stage first" in capsys.readouterr().err

    def test_evaluate_requires_calibration(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        _run_pipeline(ini, tmp_path / "out", stages=("generate", "train"))
        rc = cli.main(["evaluate", "--config", str(ini), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "run the calibrate stage first" in capsys.readouterr().err

    def test_report_requires_evaluation(self, tmp_path, capsys):
        rc = cli.main(["report", "--out", str(tmp_path)])
        assert rc == 2
        assert "run the evaluate stage first" in capsys.readouterr().err

    def test_stale_calibration_is_refused(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        out = tmp_path / "out"
        _run_pipeline(ini, out, stages=("generate", "train", "calibrate"))
        # regenerating the dataset invalidates the recorded input digests
        rc = cli.main(
            ["generate", "--config", str(ini), "--out", str(out), "--seed", "5"]
        )
        assert rc == 0
        rc = cli.main(["evaluate", "--config", str(ini), "--out", str(out)])
        assert rc == 2
        err = capsys.readouterr().err
        assert "calibrated against different artifacts" in err
        assert "re-run the calibrate stage" in err

    def test_evaluate_on_training_split(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        out = tmp_path / "out"
        _run_pipeline(ini, out, stages=("generate", "train", "calibrate"))
        rc = cli.main(
            [
                "evaluate",
                "--config", str(ini),
                "--out", str(out),
                "--test-on-train",
            ]
        )
        assert rc == 0
        # vanilla calibrates on the training split, so in-sample coverage
        # is conservative by construction at every cell
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["mean"]) >= 0.8 - 1e-12


class TestExitCodes:
    def test_generate_reports_what_it_wrote(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        rc = cli.main(["generate", "--config", str(ini), "--out", str(tmp_path / "o")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "generate: 12 trajectories" in out
        assert "sha256=" in out

    def test_seed_override_changes_the_dataset(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(MINI_INI)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["generate", "--config", str(ini), "--out", str(out_a)]) == 0
        assert (
            cli.main(
                ["generate", "--config", str(ini), "--out", str(out_b), "--seed", "5"]
            )
            == 0
        )
        assert _sha(out_a / "dataset.bin") != _sha(out_b / "dataset.bin")

    def test_usage_errors_exit_1(self, tmp_path, capsys):
        assert cli.main([]) == 1
        assert "usage error" in capsys.readouterr().err
        assert cli.main(["frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err
        assert cli.main(["generate", "--workers", "0"]) == 1
        assert "--workers must be at least 1" in capsys.readouterr().err
        missing = tmp_path / "absent.ini"
        assert cli.main(["generate", "--config", str(missing)]) == 1
        assert "cannot read config file" in capsys.readouterr().err

    def test_config_errors_exit_1(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[dataset]\nn_sample = 5\n")
        assert cli.main(["generate", "--config", str(ini)]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_numerical_failures_exit_3(self, monkeypatch, capsys):
        def boom(config, args):
            raise NumericalError("boom")

        monkeypatch.setitem(cli._COMMANDS, "report", boom)
        assert cli.main(["report"]) == 3
        assert "numerical failure: boom" in capsys.readouterr().err
