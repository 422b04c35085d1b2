"""Serializable network descriptions.

A network is described by an ordered list of layer-spec dicts (the output
of each layer's .spec()). build_network() reconstructs the layer stack
from such a list with a given init rng; the JSON-canonical form of the
list is hash-stable and goes into checkpoints and config hashes.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import ContractError
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    FramewiseDense,
    Layer,
    Parameter,
    ReLU,
    Residual,
    Sequential,
)


def build_network(layer_specs: list[dict], rng: np.random.Generator) -> Sequential:
    return Sequential([_build_layer(s, rng) for s in layer_specs])


def _build_layer(spec: dict, rng: np.random.Generator) -> Layer:
    kind = spec["type"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"], bias=spec.get("bias", True), rng=rng)
    if kind == "conv2d":
        return Conv2d(spec["in"], spec["out"], kernel=spec.get("kernel", 3),
                      rng=rng, bias=spec.get("bias", True))
    if kind == "relu":
        return ReLU()
    if kind == "batch_norm":
        return BatchNorm(spec["features"], eps=spec.get("eps", 1e-5),
                         momentum=spec.get("momentum", 0.1))
    if kind == "residual":
        return Residual(Sequential([_build_layer(s, rng) for s in spec["inner"]]))
    if kind == "framewise_dense":
        return FramewiseDense(spec["channels"], spec["width"], spec["out"], rng=rng)
    raise ContractError(f"unknown layer type {kind!r}")


def netspec_hash(layer_specs: list[dict]) -> str:
    canon = json.dumps(layer_specs, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def named_params(layer: Layer, prefix: str = "") -> list[tuple[str, Parameter]]:
    """Stable (path, Parameter) pairs, depth first."""
    out: list[tuple[str, Parameter]] = []
    if isinstance(layer, Sequential):
        for i, child in enumerate(layer.layers):
            out.extend(named_params(child, f"{prefix}{i}."))
    elif isinstance(layer, Residual):
        out.extend(named_params(layer.inner, f"{prefix}inner."))
    elif isinstance(layer, FramewiseDense):
        out.extend(named_params(layer.dense, prefix))
    else:
        for p in layer.params():
            out.append((f"{prefix}{p.name}", p))
    return out


def named_buffers(layer: Layer, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    if isinstance(layer, Sequential):
        for i, child in enumerate(layer.layers):
            out.extend(named_buffers(child, f"{prefix}{i}."))
    elif isinstance(layer, Residual):
        out.extend(named_buffers(layer.inner, f"{prefix}inner."))
    else:
        for name, buf in layer.buffers().items():
            out.append((f"{prefix}{name}", buf))
    return out


def load_state(layer: Layer, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy parameter and buffer values out of a checkpoint's array dict."""
    for name, param in named_params(layer, prefix):
        if name not in arrays:
            raise ContractError(f"checkpoint is missing parameter {name!r}")
        if arrays[name].shape != param.shape:
            raise ContractError(f"checkpoint shape mismatch on {name!r}")
        param.value = np.array(arrays[name], dtype=np.float64)
        param.grad = np.zeros_like(param.value)
    _load_buffers(layer, arrays, prefix)


def _load_buffers(layer: Layer, arrays: dict[str, np.ndarray], prefix: str) -> None:
    if isinstance(layer, Sequential):
        for i, child in enumerate(layer.layers):
            _load_buffers(child, arrays, f"{prefix}{i}.")
    elif isinstance(layer, Residual):
        _load_buffers(layer.inner, arrays, f"{prefix}inner.")
    elif isinstance(layer, BatchNorm):
        layer.set_buffers(
            {
                "running_mean": arrays[f"{prefix}running_mean"],
                "running_var": arrays[f"{prefix}running_var"],
            }
        )


def state_arrays(layer: Layer) -> dict[str, np.ndarray]:
    arrays = {name: p.value for name, p in named_params(layer)}
    arrays.update({name: buf for name, buf in named_buffers(layer)})
    return arrays


def parameter_count(layer: Layer) -> int:
    return sum(p.value.size for p in layer.params())
