"""Autoencoder backend: torch training of the nonlinear shape coder.

The network is a mirrored pair of fully connected stacks (ReLU hidden
layers, linear encoder output, softmax decoder output) plus a bias-free
linear map from polynomial latent features to latent derivatives.  All
three are trained jointly on a composite loss

    L = L_recon + w_dx * L_dx + w_dz * L_dz

where L_recon is the KL divergence between each normalized input row and
its reconstruction, L_dx compares the measured row derivative against the
dynamics prediction pushed through the decoder Jacobian, and L_dz compares
the dynamics prediction against the row derivative pulled through the
encoder Jacobian.  Both Jacobian products are evaluated as forward-mode
directional derivatives built from ordinary tensor ops, so reverse-mode
autograd differentiates the whole loss.

Training is the only torch-dependent step; the fitted model is returned as
a numpy :class:`~romuq.rom.mlp.AeRom` and serializes like any other model.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .. import dataset as ds
from .. import numerics
from ..errors import DataError, NumericalError, UsageError
from .mlp import AeRom
from .sindy import SindyModel, _exponent_tuples, n_polynomial_features

try:
    import torch
except ImportError as exc:  # pragma: no cover - exercised only without the extra
    raise UsageError(
        "the autoencoder backend needs torch; install the 'ae' extra"
    ) from exc

__all__ = ["AeConfig", "fit_ae_rom", "composite_loss"]


@dataclass(frozen=True)
class AeConfig:
    """Hyperparameters of the autoencoder + SINDy backend.

    ``hidden_widths`` of None derives the mirrored stack by halving the bin
    count three times (64 bins give 32, 16, 8).  The loss weights are the
    magnitude-ratio scaling of the data and its derivative, each times a
    configurable factor.
    """

    latent_dim: int = 4
    poly_order: int = 2
    sindy_threshold: float = 0.05
    hidden_widths: tuple | None = None
    batch_size: int = 25
    learning_rate: float = 0.0042
    weight_decay: float = 1e-3
    patience: int = 50
    tol: float = 1e-8
    max_epochs: int = 1000
    dx_weight_factor: float = 1.0
    dz_weight_factor: float = 1.0
    val_frac: float = 0.1
    lr_decay: float = 0.5

    def __post_init__(self):
        if self.latent_dim < 2:
            raise DataError(
                f"latent_dim must be at least 2 (shape + mass), got {self.latent_dim}"
            )
        if self.poly_order < 1:
            raise DataError("poly_order must be at least 1")
        if self.hidden_widths is not None:
            widths = tuple(int(w) for w in self.hidden_widths)
            if not widths or any(w < 1 for w in widths):
                raise DataError("hidden_widths must be positive integers")
            object.__setattr__(self, "hidden_widths", widths)
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DataError("batch_size, max_epochs, and patience must be positive")
        if not (self.learning_rate > 0 and self.tol > 0):
            raise DataError("learning_rate and tol must be positive")
        if self.weight_decay < 0 or self.sindy_threshold < 0:
            raise DataError("weight_decay and sindy_threshold must be nonnegative")
        if not (self.dx_weight_factor > 0 and self.dz_weight_factor > 0):
            raise DataError("loss weight factors must be positive")
        if not 0.0 <= self.val_frac <= 0.5:
            raise DataError("val_frac must lie in [0, 0.5]")
        if not 0.0 < self.lr_decay <= 1.0:
            raise DataError("lr_decay must lie in (0, 1]")

    def widths_for(self, n_bins: int) -> tuple:
        if self.hidden_widths is not None:
            return self.hidden_widths
        widths = (n_bins // 2, n_bins // 4, n_bins // 8)
        if any(w < self.latent_dim - 1 for w in widths):
            raise DataError(
                f"cannot derive hidden widths for {n_bins} bins and latent_dim "
                f"{self.latent_dim}; pass hidden_widths explicitly"
            )
        return widths


def _poly_features_torch(z: "torch.Tensor", poly_order: int) -> "torch.Tensor":
    """Polynomial library on a latent batch, column order as in sindy."""
    n, m = z.shape
    columns = []
    for combo in _exponent_tuples(m, poly_order):
        value = torch.ones(n, dtype=z.dtype)
        for idx in combo:
            value = value * z[:, idx]
        columns.append(value)
    return torch.stack(columns, dim=1)


def _mlp_jvp(layers, x, x_dot, softmax_output: bool):
    """Forward pass with a directional derivative alongside the value.

    Propagates the pair (h, dh) through each layer: a dense map takes the
    tangent through its weight, ReLU masks it by the active units, and the
    final softmax (when requested) maps dh to s * (dh - <s, dh>).
    """
    h, dh = x, x_dot
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        h = layer(h)
        dh = torch.nn.functional.linear(dh, layer.weight)
        if i != last:
            mask = (h > 0).to(h.dtype)
            h = h * mask
            dh = dh * mask
    if softmax_output:
        s = torch.softmax(h, dim=1)
        dh = s * (dh - (s * dh).sum(dim=1, keepdim=True))
        h = s
    return h, dh


class _AeSindyNet(torch.nn.Module):
    """Encoder/decoder stacks plus the bias-free dynamics coefficients."""

    def __init__(self, n_bins, latent_shape, hidden_widths, poly_order, generator):
        super().__init__()
        enc_dims = [n_bins, *hidden_widths, latent_shape]
        dec_dims = list(reversed(enc_dims))
        self.encoder = torch.nn.ModuleList(
            torch.nn.Linear(enc_dims[i], enc_dims[i + 1], dtype=torch.float64)
            for i in range(len(enc_dims) - 1)
        )
        self.decoder = torch.nn.ModuleList(
            torch.nn.Linear(dec_dims[i], dec_dims[i + 1], dtype=torch.float64)
            for i in range(len(dec_dims) - 1)
        )
        n_features = n_polynomial_features(latent_shape + 1, poly_order)
        self.xi = torch.nn.Parameter(
            torch.empty(n_features, latent_shape, dtype=torch.float64)
        )
        self.poly_order = poly_order
        self._init_params(generator)

    def _init_params(self, generator):
        # Kaiming fan-in scaling on the ReLU layers, Xavier on the linear
        # output layer of each stack; biases start at zero.
        with torch.no_grad():
            for stack in (self.encoder, self.decoder):
                last = len(stack) - 1
                for i, layer in enumerate(stack):
                    fan_out, fan_in = layer.weight.shape
                    if i != last:
                        std = float(np.sqrt(2.0 / fan_in))
                    else:
                        std = float(np.sqrt(2.0 / (fan_in + fan_out)))
                    layer.weight.normal_(0.0, std, generator=generator)
                    layer.bias.zero_()
            fan_in, fan_out = self.xi.shape
            self.xi.normal_(
                0.0, float(np.sqrt(2.0 / (fan_in + fan_out))), generator=generator
            )

    def encode_jvp(self, x, x_dot):
        return _mlp_jvp(self.encoder, x, x_dot, softmax_output=False)

    def decode_jvp(self, z, z_dot):
        return _mlp_jvp(self.decoder, z, z_dot, softmax_output=True)

    def sindy_rhs(self, z_full):
        return _poly_features_torch(z_full, self.poly_order) @ self.xi


def composite_loss(net, x, x_dot, scaled_mass, w_dx, w_dz, tol):
    """Evaluate the training loss on a batch.

    Returns the total plus the three unweighted parts (for diagnostics).
    ``x`` rows must be normalized; ``tol`` guards both logarithms of the KL
    term, so identical input and reconstruction give exactly zero.
    """
    z, z_dot_enc = net.encode_jvp(x, x_dot)
    z_full = torch.cat([z, scaled_mass[:, None]], dim=1)
    z_dot_sindy = net.sindy_rhs(z_full)
    x_hat, x_dot_pred = net.decode_jvp(z, z_dot_sindy)
    recon = (x * (torch.log(x + tol) - torch.log(x_hat + tol))).sum(dim=1).mean()
    loss_dx = torch.mean((x_dot_pred - x_dot) ** 2)
    loss_dz = torch.mean((z_dot_sindy - z_dot_enc) ** 2)
    total = recon + w_dx * loss_dx + w_dz * loss_dz
    return total, recon, loss_dx, loss_dz


def _stack_rows(trajectories, time_grid):
    xs, dxs, masses = [], [], []
    for traj in trajectories:
        xs.append(traj.shapes)
        dxs.append(numerics.finite_diff_derivative(traj.shapes, time_grid.dt))
        masses.append(traj.scaled_mass)
    return (
        torch.from_numpy(np.concatenate(xs)),
        torch.from_numpy(np.concatenate(dxs)),
        torch.from_numpy(np.concatenate(masses)),
    )


def _magnitude_ratio(numerator, denominator) -> float:
    num = float(torch.mean(torch.abs(numerator)))
    den = float(torch.mean(torch.abs(denominator)))
    return num / den if den > 0 else 1.0


def fit_ae_rom(
    train: list,
    bin_grid: ds.BinGrid,
    time_grid: ds.TimeGrid,
    mass_scale: float,
    config: AeConfig = AeConfig(),
    rng_seed=0,
) -> AeRom:
    """Train the autoencoder backend and return a numpy inference model.

    Parameters mirror :func:`romuq.rom.pod.fit_pod_rom`.  A fraction of the
    training trajectories (``config.val_frac``, at least one trajectory)
    is held out to drive early stopping and the learning-rate schedule;
    with a single trajectory the training loss is monitored instead.

    The dynamics coefficients are trained jointly through the loss, then
    hard-thresholded at ``config.sindy_threshold``, so the stored model
    satisfies the usual exact-sparsity convention.

    The returned model carries a ``training_log`` dict (epoch losses, best
    validation loss, stopping reason); it is diagnostic only and is not
    serialized.

    Raises
    ------
    NumericalError
        If the loss leaves the finite domain, with the failing epoch and
        batch in the message.
    """
    if not train:
        raise DataError("training set is empty")
    n_steps = time_grid.n_steps
    for traj in train:
        if traj.n_steps != n_steps or traj.n_bins != bin_grid.n_bins:
            raise DataError(
                "training trajectories disagree with the stated grids"
            )
    latent_shape = config.latent_dim - 1
    widths = config.widths_for(bin_grid.n_bins)

    rng = np.random.default_rng(rng_seed)
    generator = torch.Generator().manual_seed(
        int(rng.integers(np.iinfo(np.int64).max))
    )
    net = _AeSindyNet(
        bin_grid.n_bins, latent_shape, widths, config.poly_order, generator
    )

    n_traj = len(train)
    order = rng.permutation(n_traj)
    n_val = min(max(1, round(config.val_frac * n_traj)), n_traj - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_tr, dx_tr, s_tr = _stack_rows([train[i] for i in train_idx], time_grid)
    if n_val:
        x_val, dx_val, s_val = _stack_rows([train[i] for i in val_idx], time_grid)
    else:
        x_val, dx_val, s_val = x_tr, dx_tr, s_tr

    # Magnitude-ratio loss weights, fixed before training from the data and
    # the freshly initialized encoder.
    with torch.no_grad():
        w_dx = config.dx_weight_factor * _magnitude_ratio(x_tr, dx_tr)
        z0, z0_dot = net.encode_jvp(x_tr, dx_tr)
        w_dz = config.dz_weight_factor * _magnitude_ratio(z0, z0_dot)

    optimizer = torch.optim.AdamW(
        net.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=config.lr_decay, patience=max(1, config.patience // 2)
    )

    n_rows = x_tr.shape[0]
    best_val = np.inf
    best_state = copy.deepcopy(net.state_dict())
    epochs_since_best = 0
    log = {"train_loss": [], "val_loss": [], "stopped_early": False}
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n_rows)
        batch_losses = []
        for b, start in enumerate(range(0, n_rows, config.batch_size)):
            idx = torch.from_numpy(perm[start : start + config.batch_size])
            loss, *_ = composite_loss(
                net, x_tr[idx], dx_tr[idx], s_tr[idx], w_dx, w_dz, config.tol
            )
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
        with torch.no_grad():
            val_loss, *_ = composite_loss(
                net, x_val, dx_val, s_val, w_dx, w_dz, config.tol
            )
        val_loss = float(val_loss)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        scheduler.step(val_loss)
        log["train_loss"].append(float(np.mean(batch_losses)))
        log["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(net.state_dict())
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                log["stopped_early"] = True
                break
    net.load_state_dict(best_state)
    log["best_val_loss"] = best_val
    log["n_epochs"] = len(log["val_loss"])
    log["loss_weights"] = (w_dx, w_dz)

    with torch.no_grad():
        encoder_layers = [
            (layer.weight.numpy().copy(), layer.bias.numpy().copy())
            for layer in net.encoder
        ]
        decoder_layers = [
            (layer.weight.numpy().copy(), layer.bias.numpy().copy())
            for layer in net.decoder
        ]
        xi = net.xi.numpy().copy()
    xi[np.abs(xi) < config.sindy_threshold] = 0.0
    sindy = SindyModel(
        coefficients=xi,
        n_state=config.latent_dim,
        poly_order=config.poly_order,
        threshold=config.sindy_threshold,
        ridge=0.0,
    )
    rom = AeRom(
        encoder_layers=encoder_layers,
        decoder_layers=decoder_layers,
        sindy=sindy,
        bin_grid=bin_grid,
        time_grid=time_grid,
        mass_scale=mass_scale,
    )
    rom.training_log = log
    return rom
