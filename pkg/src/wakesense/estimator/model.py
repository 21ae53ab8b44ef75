"""CNN-BiLSTM multi-output network as a fixed forward/backward graph."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ..nn import layers as L
from ..nn.params import ParameterSet

VARIANTS = ("cnn_bilstm", "cnn_only")


@dataclass(frozen=True)
class ModelConfig:
    sl: int = 64
    n_sensors: int = 3
    conv_blocks: tuple[tuple[int, int], ...] = ((32, 5), (64, 3))
    pool: int = 2
    hidden: int = 64
    dense: int = 64
    dropout: float = 0.3
    n_speeds: int = 5
    n_dirs: int = 2
    variant: str = "cnn_bilstm"
    # width of the dense layer replacing the BiLSTM in the cnn_only variant;
    # 0 means "match the BiLSTM parameter count"
    flat_units: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks",
                           tuple((int(f), int(k)) for f, k in self.conv_blocks))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.sl, self.n_sensors, self.hidden, self.dense, self.pool) < 1:
            raise ValueError("sizes must be positive")
        if not self.conv_blocks:
            raise ValueError("at least one conv block is required")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_speeds < 2 or self.n_dirs < 2:
            raise ValueError("classification heads need at least two classes")
        self.feature_shape()  # raises if the pooled sequence would be empty

    def feature_shape(self) -> tuple[int, int]:
        """(channels, length) of the conv stack output fed to the recurrent stage."""
        length = self.sl
        for i, (_, k) in enumerate(self.conv_blocks):
            length = L.conv1d_out_len(length, k)
            if length < self.pool:
                raise ValueError(f"sequence too short after conv block {i} "
                                 f"(length {length}, pool {self.pool}); raise sl or shrink kernels")
            length = (length - self.pool) // self.pool + 1
        return self.conv_blocks[-1][0], length

    def bilstm_param_count(self) -> int:
        c, _ = self.feature_shape()
        return 2 * 4 * self.hidden * (c + self.hidden + 1)

    def flat_width(self) -> int:
        if self.flat_units:
            return self.flat_units
        # the flat layer and the shared layer after it together replace the
        # BiLSTM and its 2H-wide readout into the shared layer
        c, length = self.feature_shape()
        budget = self.bilstm_param_count() + 2 * self.hidden * self.dense
        return max(1, round(budget / (c * length + 1 + self.dense)))

    def readout_width(self) -> int:
        return 2 * self.hidden if self.variant == "cnn_bilstm" else self.flat_width()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conv_blocks" in d:
            d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        return cls(**d)


class Outputs(NamedTuple):
    x_hat: np.ndarray        # (B,) in [-1, 1]
    speed_logits: np.ndarray  # (B, V)
    dir_logits: np.ndarray    # (B, D)


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterSet:
    p = ParameterSet()
    c_in = config.n_sensors
    for i, (filters, k) in enumerate(config.conv_blocks):
        # no conv bias: the following batch norm cancels it
        p.add(f"conv{i}.w", _kaiming(rng, (filters, c_in, k), c_in * k))
        p.add(f"bn{i}.gamma", np.ones(filters))
        p.add(f"bn{i}.beta", np.zeros(filters))
        p.add(f"bn{i}.running_mean", np.zeros(filters), trainable=False)
        p.add(f"bn{i}.running_var", np.ones(filters), trainable=False)
        c_in = filters
    c, length = config.feature_shape()
    H = config.hidden
    if config.variant == "cnn_bilstm":
        bound = 1.0 / np.sqrt(H)
        for d in ("fwd", "bwd"):
            p.add(f"lstm_{d}.W", rng.uniform(-bound, bound, (c, 4 * H)))
            p.add(f"lstm_{d}.U", rng.uniform(-bound, bound, (H, 4 * H)))
            b = rng.uniform(-bound, bound, 4 * H)
            b[H:2 * H] = 1.0
            p.add(f"lstm_{d}.b", b)
    else:
        width = config.flat_width()
        p.add("flat.w", _kaiming(rng, (c * length, width), c * length))
        p.add("flat.b", np.zeros(width))
    r = config.readout_width()
    p.add("shared.w", _kaiming(rng, (r, config.dense), r))
    p.add("shared.b", np.zeros(config.dense))
    for name, units in (("head_x", 1), ("head_v", config.n_speeds), ("head_d", config.n_dirs)):
        p.add(f"{name}.w", _kaiming(rng, (config.dense, units), config.dense))
        p.add(f"{name}.b", np.zeros(units))
    return p


def forward(params: ParameterSet, X: np.ndarray, config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None, dropout_mask: np.ndarray | None = None,
            check: bool = False):
    """Run the network on windows ``X`` of shape (B, sl, N) or (sl, N).

    Returns ``(Outputs, cache)``. In train mode batch norm uses batch
    statistics and dropout draws from ``rng`` unless ``dropout_mask`` is given.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (config.sl, config.n_sensors):
        raise ValueError(f"window shape {X.shape[1:]} does not match "
                         f"(sl={config.sl}, N={config.n_sensors})")
    cache = {}
    h = X.transpose(0, 2, 1)
    for i in range(len(config.conv_blocks)):
        w = params[f"conv{i}.w"]
        h, cache[f"conv{i}"] = L.conv1d_forward(h, w, np.zeros(w.shape[0]))
        h, cache[f"bn{i}"] = L.batchnorm1d_forward(
            h, params[f"bn{i}.gamma"], params[f"bn{i}.beta"],
            params[f"bn{i}.running_mean"], params[f"bn{i}.running_var"], mode)
        h, cache[f"relu{i}"] = L.relu_forward(h)
        h, cache[f"pool{i}"] = L.maxpool1d_forward(h, config.pool)
    feat_shape = h.shape
    if config.variant == "cnn_bilstm":
        seq = h.transpose(0, 2, 1)
        out, cache["bilstm"] = L.bilstm_forward(
            seq,
            (params["lstm_fwd.W"], params["lstm_fwd.U"], params["lstm_fwd.b"]),
            (params["lstm_bwd.W"], params["lstm_bwd.U"], params["lstm_bwd.b"]),
            check=check)
        H = config.hidden
        # final state of each direction
        r = np.concatenate([out[:, -1, :H], out[:, 0, H:]], axis=1)
        cache["seq_shape"] = out.shape
    else:
        r, cache["flat"] = L.dense_forward(h.reshape(h.shape[0], -1), params["flat.w"], params["flat.b"])
        r, cache["flat_relu"] = L.relu_forward(r)
    cache["feat_shape"] = feat_shape
    r, cache["dropout"] = L.dropout_forward(r, config.dropout, mode, rng, dropout_mask)
    s, cache["shared"] = L.dense_forward(r, params["shared.w"], params["shared.b"])
    s, cache["shared_relu"] = L.relu_forward(s)
    zx, cache["head_x"] = L.dense_forward(s, params["head_x.w"], params["head_x.b"])
    x_hat, cache["tanh"] = L.tanh_forward(zx[:, 0])
    zv, cache["head_v"] = L.dense_forward(s, params["head_v.w"], params["head_v.b"])
    zd, cache["head_d"] = L.dense_forward(s, params["head_d.w"], params["head_d.b"])
    if check:
        L.check_finite("network outputs", x_hat, zv, zd)
    return Outputs(x_hat, zv, zd), cache


def backward(cache, config: ModelConfig, d_xhat, d_speed, d_dir) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable parameter."""
    g = {}
    dzx = L.tanh_backward(d_xhat, cache["tanh"])[:, None]
    ds = 0.0
    for name, dz in (("head_x", dzx), ("head_v", d_speed), ("head_d", d_dir)):
        dsi, g[f"{name}.w"], g[f"{name}.b"] = L.dense_backward(dz, cache[name])
        ds = ds + dsi
    ds = L.relu_backward(ds, cache["shared_relu"])
    dr, g["shared.w"], g["shared.b"] = L.dense_backward(ds, cache["shared"])
    dr = L.dropout_backward(dr, cache["dropout"])
    feat_shape = cache["feat_shape"]
    if config.variant == "cnn_bilstm":
        H = config.hidden
        dout = np.zeros(cache["seq_shape"])
        dout[:, -1, :H] = dr[:, :H]
        dout[:, 0, H:] = dr[:, H:]
        dseq, gf, gb = L.bilstm_backward(dout, cache["bilstm"])
        for d, grads in (("fwd", gf), ("bwd", gb)):
            g[f"lstm_{d}.W"], g[f"lstm_{d}.U"], g[f"lstm_{d}.b"] = grads
        dh = dseq.transpose(0, 2, 1)
    else:
        dr = L.relu_backward(dr, cache["flat_relu"])
        dflat, g["flat.w"], g["flat.b"] = L.dense_backward(dr, cache["flat"])
        dh = dflat.reshape(feat_shape)
    for i in reversed(range(len(config.conv_blocks))):
        dh = L.maxpool1d_backward(dh, cache[f"pool{i}"])
        dh = L.relu_backward(dh, cache[f"relu{i}"])
        dh, g[f"bn{i}.gamma"], g[f"bn{i}.beta"] = L.batchnorm1d_backward(dh, cache[f"bn{i}"])
        dh, g[f"conv{i}.w"], _ = L.conv1d_backward(dh, cache[f"conv{i}"])
    return g
