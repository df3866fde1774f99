"""Shared-trunk actor-critic network.

A stack of residual blocks reads the <2, 4R, 4C> observation.  The flattened
trunk features feed three heads:

* actor: two dense layers producing one 2-way softmax per intersection
  (maintain vs switch);
* local critic: two shared dense layers, then a linear layer with one value
  per intersection;
* global critic: the same shared dense features through two further dense
  layers ending in a single linear value.

Desk-scale default trunk is (16, 32) channels; the full-scale
(32, 64, 128, 256) stack is available through the config.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, residual_block
from .checkpoint import load_arrays, save_arrays

MAINTAIN = 0
SWITCH = 1


@dataclass(frozen=True)
class NetConfig:
    rows: int
    cols: int
    trunk_channels: tuple[int, ...] = (16, 32)
    head_hidden: int = 64

    def __post_init__(self):
        if not self.trunk_channels:
            raise ValueError("trunk_channels must be nonempty")

    @property
    def n_tls(self) -> int:
        return self.rows * self.cols

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (2, 4 * self.rows, 4 * self.cols)


@dataclass
class NetParams:
    config: NetConfig
    tensors: dict[str, Tensor]


@dataclass
class NetOutput:
    log_policy: Tensor      # (n_tls, 2)
    local_values: Tensor    # (n_tls,)
    global_value: Tensor    # scalar

    @property
    def policy(self) -> np.ndarray:
        return np.exp(self.log_policy.data)

    @property
    def locals_np(self) -> np.ndarray:
        return self.local_values.data

    @property
    def global_np(self) -> float:
        return float(self.global_value.data)


def init_network(config: NetConfig, seed: int) -> NetParams:
    """He-initialized parameters; output layers start near zero so the
    policy opens uniform and the critics open flat."""
    rng = np.random.default_rng(seed)

    def conv(c_out, c_in, k):
        std = np.sqrt(2.0 / (c_in * k * k))
        return Tensor(rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=True)

    def dense(m, n, std_scale=1.0):
        std = std_scale * np.sqrt(2.0 / n)
        w = Tensor(rng.normal(0.0, std, size=(m, n)), requires_grad=True)
        b = Tensor(np.zeros(m), requires_grad=True)
        return w, b

    t: dict[str, Tensor] = {}
    c_in = 2
    h, w = 4 * config.rows, 4 * config.cols
    for i, c_out in enumerate(config.trunk_channels):
        t[f"trunk{i}.conv1.w"] = conv(c_out, c_in, 3)
        t[f"trunk{i}.norm1.g"] = Tensor(np.ones(c_out), requires_grad=True)
        t[f"trunk{i}.norm1.b"] = Tensor(np.zeros(c_out), requires_grad=True)
        t[f"trunk{i}.conv2.w"] = conv(c_out, c_out, 3)
        t[f"trunk{i}.norm2.g"] = Tensor(np.ones(c_out), requires_grad=True)
        t[f"trunk{i}.norm2.b"] = Tensor(np.zeros(c_out), requires_grad=True)
        if c_in != c_out:
            t[f"trunk{i}.proj.w"] = conv(c_out, c_in, 1)
        c_in = c_out
    flat = c_in * h * w
    hid = config.head_hidden
    n = config.n_tls
    t["actor.fc1.w"], t["actor.fc1.b"] = dense(hid, flat)
    t["actor.fc2.w"], t["actor.fc2.b"] = dense(2 * n, hid, std_scale=0.01)
    t["critic.fc1.w"], t["critic.fc1.b"] = dense(hid, flat)
    t["critic.fc2.w"], t["critic.fc2.b"] = dense(hid, hid)
    t["critic.local.w"], t["critic.local.b"] = dense(n, hid, std_scale=0.01)
    t["critic.glob1.w"], t["critic.glob1.b"] = dense(hid, hid)
    t["critic.glob2.w"], t["critic.glob2.b"] = dense(1, hid, std_scale=0.01)
    return NetParams(config, t)


def forward(params: NetParams, state) -> NetOutput:
    cfg = params.config
    t = params.tensors
    x = state if isinstance(state, Tensor) else ad.constant(state)
    if x.shape != cfg.input_shape:
        raise ValueError(f"state shape {x.shape} does not match config {cfg.input_shape}")
    for i in range(len(cfg.trunk_channels)):
        proj = t.get(f"trunk{i}.proj.w")
        x = residual_block(x, t[f"trunk{i}.conv1.w"], t[f"trunk{i}.norm1.g"],
                           t[f"trunk{i}.norm1.b"], t[f"trunk{i}.conv2.w"],
                           t[f"trunk{i}.norm2.g"], t[f"trunk{i}.norm2.b"], proj)
    feat = ad.flatten(x)
    a = ad.relu(ad.dense(feat, t["actor.fc1.w"], t["actor.fc1.b"]))
    logits = ad.dense(a, t["actor.fc2.w"], t["actor.fc2.b"])
    log_policy = ad.log_softmax_rows(ad.reshape(logits, (cfg.n_tls, 2)))
    c = ad.relu(ad.dense(feat, t["critic.fc1.w"], t["critic.fc1.b"]))
    c = ad.relu(ad.dense(c, t["critic.fc2.w"], t["critic.fc2.b"]))
    local_values = ad.dense(c, t["critic.local.w"], t["critic.local.b"])
    g = ad.relu(ad.dense(c, t["critic.glob1.w"], t["critic.glob1.b"]))
    global_value = ad.reshape(ad.dense(g, t["critic.glob2.w"], t["critic.glob2.b"]), ())
    return NetOutput(log_policy, local_values, global_value)


# ------------------------------------------------------------------ actions

def sample_actions(policy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One independent maintain/switch draw per intersection."""
    return (rng.random(policy.shape[0]) < policy[:, 1]).astype(np.int64)


def greedy_actions(policy: np.ndarray) -> np.ndarray:
    return np.argmax(policy, axis=1).astype(np.int64)


def log_prob(policy: np.ndarray, actions: np.ndarray) -> float:
    rows = np.arange(policy.shape[0])
    return float(np.log(policy[rows, actions]).sum())


def entropy(policy: np.ndarray) -> float:
    p = policy
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(-terms.sum())


# -------------------------------------------------------------- persistence

def save_params(path, params: NetParams, extra_arrays: dict[str, np.ndarray] | None = None,
                extra_manifest: dict | None = None) -> None:
    manifest = {
        "net_config": {
            "rows": params.config.rows,
            "cols": params.config.cols,
            "trunk_channels": list(params.config.trunk_channels),
            "head_hidden": params.config.head_hidden,
        },
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    arrays = {name: t.data for name, t in params.tensors.items()}
    if extra_arrays:
        for name, arr in extra_arrays.items():
            arrays[f"extra.{name}"] = arr
    save_arrays(path, arrays, manifest)


def load_params(path) -> tuple[NetParams, dict[str, np.ndarray], dict]:
    """Returns (params, extra arrays, manifest)."""
    arrays, manifest = load_arrays(path)
    nc = manifest["net_config"]
    config = NetConfig(nc["rows"], nc["cols"], tuple(nc["trunk_channels"]), nc["head_hidden"])
    tensors = {}
    extras = {}
    for name, arr in arrays.items():
        if name.startswith("extra."):
            extras[name[len("extra."):]] = arr
        else:
            tensors[name] = Tensor(arr, requires_grad=True)
    return NetParams(config, tensors), extras, manifest
