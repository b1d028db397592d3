"""From-scratch residual MLP regressor with exact reverse-mode gradients.

Hidden widths are grouped into blocks that each end at ``embed_dim`` (e.g.
widths 512-32-256-32 with embed 32 form blocks [512,32] and [256,32]); a
block whose input width equals its output width gets an identity skip
connection. Within a layer the order is linear -> batchnorm -> LeakyReLU ->
dropout. Updates use Adam with decoupled weight decay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .rng import keyed_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.99

_INIT_TAG = 0x4E4554
_DROP_TAG = 0x44524F


@dataclass(frozen=True)
class ArchitectureConfig:
    hidden_widths: tuple[int, ...]
    embed_dim: int
    dropout_rate: float = 0.0
    leaky_slope: float = 0.01
    use_batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths or any(w <= 0 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError("learning_rate must be finite and positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class ModelState:
    arch: ArchitectureConfig
    input_dim: int
    params: dict[str, np.ndarray]
    bn_mean: dict[str, np.ndarray] = field(default_factory=dict)
    bn_var: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def blocks_of(arch: ArchitectureConfig) -> list[list[int]]:
    """Group hidden widths into blocks, cutting after each embed_dim occurrence."""
    blocks: list[list[int]] = []
    current: list[int] = []
    for w in arch.hidden_widths:
        current.append(w)
        if w == arch.embed_dim:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks


def layer_plan(arch: ArchitectureConfig, input_dim: int) -> list[list[tuple[str, int, int]]]:
    """Per-block lists of (layer_name, fan_in, fan_out)."""
    plan = []
    fan_in = input_dim
    index = 0
    for block in blocks_of(arch):
        layers = []
        for width in block:
            layers.append((f"L{index}", fan_in, width))
            fan_in = width
            index += 1
        plan.append(layers)
    return plan


def init_model(arch: ArchitectureConfig, input_dim: int, seed: int) -> ModelState:
    """He fan-in initialization, zero biases, identity batchnorm; deterministic per seed."""
    if input_dim <= 0:
        raise ValueError("input_dim must be positive")
    rng = keyed_rng(_INIT_TAG, seed)
    params: dict[str, np.ndarray] = {}
    bn_mean: dict[str, np.ndarray] = {}
    bn_var: dict[str, np.ndarray] = {}
    for layers in layer_plan(arch, input_dim):
        for name, fan_in, fan_out in layers:
            params[f"{name}.W"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out))
            params[f"{name}.b"] = np.zeros(fan_out)
            if arch.use_batchnorm:
                params[f"{name}.gamma"] = np.ones(fan_out)
                params[f"{name}.beta"] = np.zeros(fan_out)
                bn_mean[name] = np.zeros(fan_out)
                bn_var[name] = np.ones(fan_out)
    last = arch.hidden_widths[-1]
    params["head.W"] = rng.normal(0.0, math.sqrt(1.0 / last), (last, 1))
    params["head.b"] = np.zeros(1)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(
        arch=arch,
        input_dim=input_dim,
        params=params,
        bn_mean=bn_mean,
        bn_var=bn_var,
        adam_m=zeros,
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
    )


def leaky_relu(u: np.ndarray, slope: float) -> np.ndarray:
    return np.where(u > 0, u, slope * u)


def forward(state: ModelState, X, train_mode: bool, dropout_seed: int = 0):
    """Run the network; returns (predictions, cache for backward).

    Train mode uses batch statistics (updating the running ones) and seeded
    dropout masks; eval mode uses running statistics and no dropout.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != state.input_dim:
        raise ValueError(f"expected {state.input_dim} input columns, got {X.shape[1]}")
    arch = state.arch
    a = X
    layer_index = 0
    block_caches = []
    for block_index, layers in enumerate(layer_plan(arch, state.input_dim)):
        block_input = a
        layer_caches = []
        for name, _, _ in layers:
            a_in = a
            z = a_in @ state.params[f"{name}.W"] + state.params[f"{name}.b"]
            if arch.use_batchnorm:
                if train_mode:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    state.bn_mean[name] = BN_MOMENTUM * state.bn_mean[name] + (1 - BN_MOMENTUM) * mu
                    state.bn_var[name] = BN_MOMENTUM * state.bn_var[name] + (1 - BN_MOMENTUM) * var
                else:
                    mu = state.bn_mean[name]
                    var = state.bn_var[name]
                std = np.sqrt(var + BN_EPS)
                zhat = (z - mu) / std
                u = state.params[f"{name}.gamma"] * zhat + state.params[f"{name}.beta"]
            else:
                zhat, std = None, None
                u = z
            act = leaky_relu(u, arch.leaky_slope)
            if train_mode and arch.dropout_rate > 0:
                mask_rng = keyed_rng(_DROP_TAG, dropout_seed, layer_index)
                keep = 1.0 - arch.dropout_rate
                mask = (mask_rng.random(act.shape) < keep) / keep
                a = act * mask
            else:
                mask = None
                a = act
            layer_caches.append({"name": name, "a_in": a_in, "zhat": zhat, "std": std,
                                 "u": u, "mask": mask})
            layer_index += 1
        # skips connect consecutive block outputs; the raw features never feed one
        skip = block_index > 0 and block_input.shape == a.shape
        if skip:
            a = a + block_input
        block_caches.append({"layers": layer_caches, "skip": skip})
    yhat = (a @ state.params["head.W"] + state.params["head.b"]).ravel()
    cache = {"blocks": block_caches, "head_in": a, "train_mode": train_mode, "n": X.shape[0]}
    return yhat, cache


def backward(state: ModelState, cache, dL_dyhat) -> dict[str, np.ndarray]:
    """Exact gradients of every parameter given d(loss)/d(predictions)."""
    if not cache.get("train_mode"):
        raise ValueError("stale cache: backward requires a cache from a train-mode forward")
    dL = np.asarray(dL_dyhat, dtype=np.float64).reshape(-1, 1)
    if dL.shape[0] != cache["n"]:
        raise ValueError("stale cache: gradient length does not match the cached batch")
    arch = state.arch
    grads: dict[str, np.ndarray] = {}

    head_in = cache["head_in"]
    grads["head.W"] = head_in.T @ dL
    grads["head.b"] = dL.sum(axis=0)
    d = dL @ state.params["head.W"].T

    for block in reversed(cache["blocks"]):
        d_block_out = d
        for layer in reversed(block["layers"]):
            name = layer["name"]
            if layer["mask"] is not None:
                d = d * layer["mask"]
            d = d * np.where(layer["u"] > 0, 1.0, arch.leaky_slope)
            if arch.use_batchnorm:
                zhat, std = layer["zhat"], layer["std"]
                grads[f"{name}.gamma"] = (d * zhat).sum(axis=0)
                grads[f"{name}.beta"] = d.sum(axis=0)
                dzhat = d * state.params[f"{name}.gamma"]
                n = dzhat.shape[0]
                d = (dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0)) / std
            grads[f"{name}.W"] = layer["a_in"].T @ d
            grads[f"{name}.b"] = d.sum(axis=0)
            d = d @ state.params[f"{name}.W"].T
        if block["skip"]:
            d = d + d_block_out
    return grads


def adam_step(state: ModelState, grads: dict[str, np.ndarray], opt: OptimizerConfig) -> ModelState:
    """Decoupled weight decay followed by a bias-corrected Adam update (in place)."""
    t = state.step + 1
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    lr = opt.learning_rate
    for key, p in state.params.items():
        g = grads[key].reshape(p.shape)
        if opt.weight_decay:
            p *= 1.0 - lr * opt.weight_decay
        m = state.adam_m[key]
        v = state.adam_v[key]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.epsilon)
    state.step = t
    return state


def parameter_count(state: ModelState) -> int:
    return sum(p.size for p in state.params.values())


def snapshot(state: ModelState) -> dict:
    """Copy of everything eval-mode predictions depend on (params + BN stats)."""
    return {
        "params": {k: v.copy() for k, v in state.params.items()},
        "bn_mean": {k: v.copy() for k, v in state.bn_mean.items()},
        "bn_var": {k: v.copy() for k, v in state.bn_var.items()},
    }


def restore(state: ModelState, snap: dict) -> None:
    for k, v in snap["params"].items():
        state.params[k] = v.copy()
    for k, v in snap["bn_mean"].items():
        state.bn_mean[k] = v.copy()
    for k, v in snap["bn_var"].items():
        state.bn_var[k] = v.copy()


def save_checkpoint(state: ModelState, path) -> None:
    """Single-file container: JSON header plus named tensors with declared shapes."""
    header = {
        "arch": asdict(state.arch),
        "input_dim": state.input_dim,
        "step": state.step,
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)}
    for group, store in (("param", state.params), ("bn_mean", state.bn_mean),
                         ("bn_var", state.bn_var), ("adam_m", state.adam_m),
                         ("adam_v", state.adam_v)):
        for key, value in store.items():
            arrays[f"{group}:{key}"] = value
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(path) as archive:
        header = json.loads(bytes(archive["__header__"].tolist()).decode("utf-8"))
        stores: dict[str, dict[str, np.ndarray]] = {
            "param": {}, "bn_mean": {}, "bn_var": {}, "adam_m": {}, "adam_v": {}
        }
        for name in archive.files:
            if name == "__header__":
                continue
            group, key = name.split(":", 1)
            stores[group][key] = archive[name]
    arch_fields = dict(header["arch"])
    arch_fields["hidden_widths"] = tuple(arch_fields["hidden_widths"])
    arch = ArchitectureConfig(**arch_fields)
    return ModelState(
        arch=arch,
        input_dim=int(header["input_dim"]),
        params=stores["param"],
        bn_mean=stores["bn_mean"],
        bn_var=stores["bn_var"],
        adam_m=stores["adam_m"],
        adam_v=stores["adam_v"],
        step=int(header["step"]),
    )
