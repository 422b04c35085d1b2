"""Fully connected autoencoder baseline scored by reconstruction error.

Five dense layers each for encoder and decoder with batch norm and ReLU
at every junction (none after the output layer). The input is L
consecutive feature frames concatenated into one vector. Two variants:
"with_labels" trains and scores only on windows whose frames are all
active (ground-truth labels required at inference too); "without_labels"
uses every window. A window's error is the per-element mean squared
reconstruction error; a clip's score averages that over the eligible
windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ClipScoringError, ContractError, DegenerateInputError
from .features import FeatureMatrix, sliding_windows, window_labels
from .nn import Adam, Sequential
from .nn.netspec import build_network
from .seeding import rng_for

log = logging.getLogger(__name__)

VARIANTS = ("with_labels", "without_labels")
_EVAL_BATCH = 512


@dataclass
class AeTrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    hidden_dim: int = 128
    bottleneck_dim: int = 8


def ae_netspec(input_dim: int, hidden_dim: int, bottleneck_dim: int) -> list[dict]:
    """5+5 dense layers, batch norm + ReLU between every pair of layers."""
    widths = (
        [input_dim] + [hidden_dim] * 4 + [bottleneck_dim] + [hidden_dim] * 4
        + [input_dim]
    )
    specs: list[dict] = []
    for i in range(10):
        specs.append({"type": "dense", "in": widths[i], "out": widths[i + 1],
                      "bias": True})
        if i < 9:
            specs.append({"type": "batch_norm", "features": widths[i + 1],
                          "eps": 1e-5, "momentum": 0.1})
            specs.append({"type": "relu"})
    return specs


@dataclass
class AeModel:
    network: Sequential
    netspec: list[dict]
    input_dim: int
    window_frames: int
    uses_labels: bool
    metadata: dict = field(default_factory=dict)

    def reconstruct(self, flat_windows: np.ndarray) -> np.ndarray:
        """Eval-mode reconstruction of (n, input_dim) rows."""
        if flat_windows.ndim != 2 or flat_windows.shape[1] != self.input_dim:
            raise ContractError(
                f"expected (n, {self.input_dim}) windows, got {flat_windows.shape}"
            )
        out = np.empty_like(flat_windows)
        for lo in range(0, flat_windows.shape[0], _EVAL_BATCH):
            hi = min(lo + _EVAL_BATCH, flat_windows.shape[0])
            out[lo:hi] = self.network.forward(flat_windows[lo:hi], train=False)
        return out


def eligible_windows(
    features: FeatureMatrix, L: int, uses_labels: bool
) -> np.ndarray:
    """Flattened (n, L*F) windows; the labeled variant keeps only windows
    whose L frames are all active."""
    data = sliding_windows(features, L)
    if uses_labels:
        if features.frame_labels is None:
            raise ContractError("the labeled variant requires activity labels")
        mask = window_labels(features, L).all(axis=1)
        data = data[mask]
    # force one layout: a strided no-copy reshape of the sliding view would
    # change BLAS summation order between otherwise identical inputs
    return np.ascontiguousarray(data).reshape(data.shape[0], L * features.n_bins)


def train_ae(
    clips_features: list[FeatureMatrix],
    variant: str,
    config: AeTrainConfig,
    window_frames: int,
    seed: int,
) -> tuple[AeModel, list[dict]]:
    """Minimize per-element MSE over the eligible windows of all clips.

    Returns the model and a per-epoch log of the mean minibatch
    reconstruction error (batch statistics, the usual training curve).
    """
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}")
    uses_labels = variant == "with_labels"
    parts = []
    for f in clips_features:
        if f.n_frames < window_frames:
            log.warning("skipping %s: fewer frames than L", f.clip_id)
            continue
        parts.append(eligible_windows(f, window_frames, uses_labels))
    windows = (
        np.concatenate(parts, axis=0) if parts else np.empty((0, 0))
    )
    if windows.shape[0] == 0:
        raise DegenerateInputError(
            "no eligible training windows"
            + (" (no fully-active windows)" if uses_labels else "")
        )

    input_dim = windows.shape[1]
    spec = ae_netspec(input_dim, config.hidden_dim, config.bottleneck_dim)
    network = build_network(spec, rng_for(seed, "init"))
    optimizer = Adam(network.params(), lr=config.lr)
    rng = rng_for(seed, "batching")

    model = AeModel(network, spec, input_dim, window_frames, uses_labels,
                    metadata={"variant": variant,
                              "error_reduction": "mean per element, then per window"})
    history: list[dict] = []
    n = windows.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, config.batch_size):
            batch = windows[order[lo : lo + config.batch_size]]
            optimizer.zero_grad()
            out = network.forward(batch, train=True)
            network.backward(2.0 * (out - batch) / out.size)
            optimizer.step()
            batch_losses.append(float(np.mean((out - batch) ** 2)))
        history.append(
            {"epoch": epoch, "train_mse": float(np.mean(batch_losses))}
        )
    return model, history


def ae_score(features: FeatureMatrix, model: AeModel) -> float:
    """Mean squared reconstruction error over the clip's eligible windows."""
    clip_id = features.clip_id or "<unnamed>"
    flat = eligible_windows(features, model.window_frames, model.uses_labels)
    if flat.shape[0] == 0:
        raise ClipScoringError(clip_id, "no fully-active window to score")
    recon = model.reconstruct(flat)
    return float(np.mean((recon - flat) ** 2, axis=1).mean())
