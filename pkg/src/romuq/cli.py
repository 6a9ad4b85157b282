"""Command-line pipeline: generate, train, calibrate, evaluate, report.

Each stage reads and writes file artifacts under the output directory, so
stages can run in separate invocations (or be re-run individually).  Every
artifact header embeds the configuration that produced it plus the SHA-256
digests of its input artifacts; downstream stages verify those digests and
refuse to mix artifacts from different runs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import conformal as cp
from . import container
from . import dataset as ds
from . import metrics
from .config import RunConfig, config_to_dict, load_config
from .errors import DataError, NumericalError, UsageError
from .rom import load_model, save_model

logger = logging.getLogger("romuq")

__all__ = ["main"]


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:g}".replace(".", "p")


def _paths(out_dir: str) -> dict:
    out = Path(out_dir)
    return {
        "root": out,
        "dataset": out / "dataset.bin",
        "coverage": out / "coverage.csv",
        "summary": out / "summary.csv",
        "widths": out / "widths.csv",
        "report": out / "report.txt",
    }


def _model_path(out: Path, method: str, fold: int = 0) -> Path:
    if fold:
        return out / f"model_{method}_fold{fold:02d}.bin"
    return out / f"model_{method}.bin"


def _calib_path(out: Path, method: str, target: str, alpha: float) -> Path:
    return out / f"calib_{method}_{target}_alpha{_alpha_tag(alpha)}.bin"


def _provenance_config(config: RunConfig) -> dict:
    # Embedded in artifact headers; the output location must not change
    # artifact bytes, so it stays out.
    fields = config_to_dict(config)
    fields.pop("out_dir", None)
    return fields


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise DataError(
            f"{path} not found; run the {stage} stage first"
        )
    return path


def _prepare_split(config: RunConfig, dataset: ds.DsdDataset, method_name: str):
    """Filter, split, and normalize exactly as the pipeline defines it."""
    kept, _ = ds.filter_by_mass(dataset.trajectories, dataset.mass_threshold)
    if len(kept) < 2:
        raise DataError("fewer than two trajectories above the mass threshold")
    scheme = config.method_scheme(method_name)
    split = ds.split_dataset(len(kept), scheme, cp.split_seed(config.seed))
    train_raw = [kept[i] for i in split.train_indices]
    _, mass_scale = ds.normalize_dataset(
        train_raw, mass_threshold=dataset.mass_threshold
    )
    normalized, _ = ds.normalize_dataset(
        kept, mass_scale=mass_scale, mass_threshold=dataset.mass_threshold
    )
    return normalized, split, mass_scale


def cmd_generate(config: RunConfig, args) -> int:
    paths = _paths(config.out_dir)
    paths["root"].mkdir(parents=True, exist_ok=True)
    dataset = ds.generate_dataset(
        n_samples=config.n_samples,
        seed=config.seed,
        bin_grid=config.bin_grid(),
        time_grid=config.time_grid(),
        kernel=config.kernel(),
        ic_params=config.ic_params(),
        mass_threshold=config.mass_threshold,
        workers=args.workers,
    )
    digest = ds.save_dataset(dataset, paths["dataset"])
    print(
        f"generate: {dataset.n_trajectories} trajectories "
        f"({dataset.n_below_threshold} at or below the {config.mass_threshold:g} "
        f"mass threshold)"
    )
    print(f"generate: wrote {paths['dataset']} sha256={digest[:16]}")
    return 0


def cmd_train(config: RunConfig, args) -> int:
    paths = _paths(config.out_dir)
    dataset_path = _require(paths["dataset"], "generate")
    dataset = ds.load_dataset(dataset_path)
    dataset_sha = container.file_sha256(dataset_path)
    config_dict = _provenance_config(config)
    for method_name in config.methods:
        normalized, split, mass_scale = _prepare_split(config, dataset, method_name)
        model, fold_models = cp.fit_models(
            normalized,
            split,
            dataset.bin_grid,
            dataset.time_grid,
            mass_scale,
            backend=config.backend,
            rom_config=config.rom_config(),
            seed=config.seed,
            workers=args.workers,
        )
        meta = {
            "method": method_name,
            "config": config_dict,
            "inputs": {"dataset": dataset_sha},
            "split": {
                "train": split.train_indices.tolist(),
                "calibration": split.calibration_indices.tolist(),
                "test": split.test_indices.tolist(),
            },
        }
        digest = save_model(model, _model_path(paths["root"], method_name), meta)
        print(
            f"train: {method_name} model "
            f"({model.backend_name}, latent_dim={model.latent_dim}) "
            f"-> {_model_path(paths['root'], method_name).name} sha256={digest[:16]}"
        )
        if model.sindy is not None:
            for coord, equation in enumerate(model.sindy.equations(), start=1):
                logger.info("train: %s dz%d/dt = %s", method_name, coord, equation)
        for fold, fold_model in sorted(fold_models.items()):
            fold_meta = dict(meta)
            fold_meta["fold"] = fold
            save_model(
                fold_model, _model_path(paths["root"], method_name, fold), fold_meta
            )
        if fold_models:
            print(f"train: {method_name} wrote {len(fold_models)} fold models")
    return 0


def _load_method_models(paths, config: RunConfig, method_name: str):
    model_path = _require(_model_path(paths["root"], method_name), "train")
    model = load_model(model_path)
    model_sha = container.file_sha256(model_path)
    fold_models = {}
    if method_name == "cv_plus":
        for fold in range(1, config.cv_folds + 1):
            fold_path = _require(
                _model_path(paths["root"], method_name, fold), "train"
            )
            fold_models[fold] = load_model(fold_path)
    return model, model_sha, fold_models


def cmd_calibrate(config: RunConfig, args) -> int:
    paths = _paths(config.out_dir)
    dataset_path = _require(paths["dataset"], "generate")
    dataset = ds.load_dataset(dataset_path)
    dataset_sha = container.file_sha256(dataset_path)
    config_dict = _provenance_config(config)
    for method_name in config.methods:
        normalized, split, _ = _prepare_split(config, dataset, method_name)
        model, model_sha, fold_models = _load_method_models(
            paths, config, method_name
        )
        for target_name in config.targets:
            target = cp.UqTarget(target_name)
            if method_name == "cv_plus":
                residuals = cp.pooled_fold_residuals(
                    normalized, split, fold_models, target
                )
            else:
                cal_trajs = [normalized[i] for i in split.calibration_indices]
                residuals = cp.compute_residuals(model, cal_trajs, target)
            if residuals.excluded:
                print(
                    f"calibrate: {method_name}/{target_name} excluded "
                    f"{len(residuals.excluded)} divergent rollouts"
                )
            for alpha in config.alphas:
                calibration = cp.calibrate(residuals, alpha, method=method_name)
                meta = {
                    "config": config_dict,
                    "inputs": {"dataset": dataset_sha, "model": model_sha},
                }
                path = _calib_path(paths["root"], method_name, target_name, alpha)
                cp.save_calibration(calibration, path, meta)
            print(
                f"calibrate: {method_name}/{target_name} "
                f"n_cal={residuals.n_samples} alphas={list(config.alphas)}"
            )
    return 0


def cmd_evaluate(config: RunConfig, args) -> int:
    paths = _paths(config.out_dir)
    dataset_path = _require(paths["dataset"], "generate")
    dataset = ds.load_dataset(dataset_path)
    dataset_sha = container.file_sha256(dataset_path)
    reports = []
    width_series = []
    for method_name in config.methods:
        normalized, split, _ = _prepare_split(config, dataset, method_name)
        model, model_sha, _ = _load_method_models(paths, config, method_name)
        if args.test_on_train:
            eval_indices = split.train_indices
        else:
            eval_indices = split.test_indices
            overlap = np.intersect1d(eval_indices, split.calibration_indices)
            if overlap.size:
                raise DataError(
                    "test and calibration indices overlap; "
                    "pass --test-on-train to evaluate on the training split"
                )
        eval_trajs = [normalized[i] for i in eval_indices]
        test_scaled = np.stack([traj.scaled_mass for traj in eval_trajs])
        for target_name in config.targets:
            target = cp.UqTarget(target_name)
            residuals = cp.compute_residuals(model, eval_trajs, target)
            if residuals.excluded:
                print(
                    f"evaluate: {method_name}/{target_name} excluded "
                    f"{len(residuals.excluded)} divergent rollouts"
                )
            target_series = []
            for alpha in config.alphas:
                path = _require(
                    _calib_path(paths["root"], method_name, target_name, alpha),
                    "calibrate",
                )
                calibration = cp.load_calibration(path)
                _, calib_meta, _ = container.read_container(path)
                inputs = calib_meta.get("inputs", {})
                if inputs.get("dataset") != dataset_sha or inputs.get("model") != model_sha:
                    raise DataError(
                        f"{path} was calibrated against different artifacts; "
                        "re-run the calibrate stage"
                    )
                reports.append(
                    metrics.coverage_from_residuals(calibration, residuals)
                )
                if isinstance(calibration, cp.CalibrationEllipsoid):
                    target_series.append(metrics.ellipsoid_volume(calibration))
                    target_series.append(metrics.ellipsoid_geometry(calibration))
                else:
                    target_series.append(
                        metrics.band_width_integral(calibration, dataset.bin_grid)
                    )
                    target_series.append(
                        metrics.band_width_integral(
                            calibration, dataset.bin_grid, test_scaled
                        )
                    )
            width_series.extend(target_series)
            chart_path = paths["root"] / f"widths_{method_name}_{target_name}.svg"
            primary = [
                s
                for s in target_series
                if s.width_kind in ("band_integral", "ellipsoid_volume")
            ]
            metrics.write_width_chart(
                primary,
                dataset.time_grid,
                f"{method_name} {target_name} set width",
                chart_path,
            )
    metrics.write_coverage_csv(reports, dataset.time_grid, paths["coverage"])
    metrics.write_summary_csv(reports, paths["summary"])
    metrics.write_width_csv(width_series, dataset.time_grid, paths["widths"])
    print(
        f"evaluate: wrote {paths['coverage'].name}, {paths['summary'].name}, "
        f"{paths['widths'].name} ({len(reports)} coverage reports)"
    )
    return 0


def _read_csv_rows(path: Path) -> list:
    import csv

    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(config: RunConfig, args) -> int:
    paths = _paths(config.out_dir)
    summary_rows = _read_csv_rows(_require(paths["summary"], "evaluate"))
    width_rows = _read_csv_rows(_require(paths["widths"], "evaluate"))
    alphas = sorted({float(row["alpha"]) for row in summary_rows}, reverse=True)
    pairs = sorted(
        {(row["target"], row["method"]) for row in summary_rows}
    )
    by_key = {
        (row["target"], row["method"], float(row["alpha"])): row
        for row in summary_rows
    }

    lines = []
    lines.append("empirical coverage, mean +/- std over cells (percent)")
    header = f"{'target':<16} {'method':<8}" + "".join(
        f"  {100 * (1 - a):14.6g}%" for a in alphas
    )
    lines.append(header)
    for target, method in pairs:
        cells = []
        for alpha in alphas:
            row = by_key.get((target, method, alpha))
            if row is None:
                cells.append(f"  {'-':>15}")
            else:
                mean = 100 * float(row["mean"])
                std = 100 * float(row["std"])
                cells.append(f"  {mean:7.2f}+/-{std:5.2f} ")
        lines.append(f"{target:<16} {method:<8}" + "".join(cells))
    lines.append("")
    lines.append("empirical coverage, median over cells (percent)")
    lines.append(header)
    for target, method in pairs:
        cells = []
        for alpha in alphas:
            row = by_key.get((target, method, alpha))
            if row is None:
                cells.append(f"  {'-':>15}")
            else:
                cells.append(f"  {100 * float(row['median']):14.2f} ")
        lines.append(f"{target:<16} {method:<8}" + "".join(cells))
    lines.append("")
    report_text = "\n".join(lines) + "\n"
    with open(paths["report"], "w", encoding="utf-8") as fh:
        fh.write(report_text)
    print(report_text, end="")

    # One width panel per method: every (target, alpha) series, raw kinds
    # only, peak-normalized so band integrals and ellipsoid volumes share
    # an axis.
    time_grid = config.time_grid()
    methods = sorted({row["method"] for row in width_rows})
    for method in methods:
        series_list = []
        seen = set()
        for row in width_rows:
            if row["method"] != method:
                continue
            if row["width_kind"] not in ("band_integral", "ellipsoid_volume"):
                continue
            key = (row["target"], float(row["alpha"]), row["width_kind"])
            if key in seen:
                continue
            seen.add(key)
            values = [
                float(r["width"])
                for r in width_rows
                if r["method"] == method
                and r["target"] == key[0]
                and float(r["alpha"]) == key[1]
                and r["width_kind"] == key[2]
            ]
            series_list.append(
                metrics.WidthSeries(
                    target=key[0],
                    method=method,
                    alpha=key[1],
                    width_kind=key[2],
                    widths=np.asarray(values),
                )
            )
        if not series_list:
            continue
        panel_path = paths["root"] / f"width_panel_{method}.svg"
        metrics.write_width_chart(
            series_list,
            time_grid,
            f"{method} prediction-set width",
            panel_path,
            normalize=True,
        )
        print(f"report: wrote {panel_path.name}")
    print(f"report: wrote {paths['report'].name}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="romuq",
        description=(
            "Conformal-prediction uncertainty quantification for "
            "latent-space reduced-order models of droplet coalescence."
        ),
    )
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument(
        "--config", metavar="PATH", help="INI configuration file"
    )
    shared.add_argument(
        "--seed", type=int, metavar="N", help="override the run seed"
    )
    shared.add_argument(
        "--workers",
        type=int,
        default=1,
        metavar="N",
        help="process count for parallel stages (default 1)",
    )
    shared.add_argument(
        "--out", metavar="DIR", help="override the output directory"
    )
    shared.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="log stage progress to stderr",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser(
        "generate", parents=[shared], help="simulate the synthetic dataset"
    )
    commands.add_parser(
        "train", parents=[shared], help="fit reduced-order models per method"
    )
    commands.add_parser(
        "calibrate", parents=[shared], help="build conformal prediction sets"
    )
    evaluate = commands.add_parser(
        "evaluate", parents=[shared], help="measure coverage and width on test data"
    )
    evaluate.add_argument(
        "--test-on-train",
        action="store_true",
        help=(
            "evaluate on the training split instead of the test split "
            "(permits calibration/test overlap)"
        ),
    )
    commands.add_parser(
        "report", parents=[shared], help="consolidated tables and width panels"
    )
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        config = load_config(args.config, overrides)
        return _COMMANDS[args.command](config, args)
    except UsageError as exc:
        print(f"romuq: usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"romuq: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"romuq: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
