"""Desk-scale versions of the two tomography networks.

``RfbModel``
    Six convolution blocks (conv -> Gaussian noise -> leaky ReLU -> dropout)
    feed a classification tail (7 logits) and, after adding a learned
    projection of the logits back onto the trunk features, a regression tail
    predicting three complex state features.

``MsModel``
    Label-conditioned generator: the flattened grid plus a dense embedding of
    the one-hot label goes through a small conv stack with batch norm and
    leaky ReLU, ending in two channels read as the real and imaginary parts of
    a 32x32 matrix for the split density layer.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ShapeError
from . import autodiff as ad

N_CLASSES = 7


def _he(rng, shape, fan_in, gain=1.0):
    return ad.Tensor(gain * rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)


def _zeros(shape):
    return ad.Tensor(np.zeros(shape), requires_grad=True)


class Model:
    """Parameter container: ordered named tensors plus non-trainable buffers."""

    mode = None

    def __init__(self):
        self.params = OrderedDict()
        self.buffers = OrderedDict()

    def parameters(self):
        return list(self.params.values())

    def state_arrays(self):
        out = OrderedDict((k, t.data) for k, t in self.params.items())
        out.update((f"buffer:{k}", v) for k, v in self.buffers.items())
        return out

    def load_arrays(self, arrays):
        for k, t in self.params.items():
            if arrays[k].shape != t.shape:
                raise ShapeError(f"parameter {k}: expected {t.shape}, got {arrays[k].shape}")
            t.data = np.array(arrays[k], dtype=ad.DTYPE)
        for k in self.buffers:
            self.buffers[k] = np.array(arrays[f"buffer:{k}"], dtype=ad.DTYPE)

    def n_parameters(self):
        return sum(t.size for t in self.params.values())


@dataclass
class RfbConfig:
    side: int = 32
    channels: tuple = (8, 16, 32, 64, 64, 64)
    strides: tuple = (1, 2, 1, 2, 1, 2)
    kernel: int = 3
    noise_sigma: float = 0.0
    dropout: float = 0.0
    slope: float = 0.2
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.strides = tuple(self.strides)


class RfbModel(Model):
    mode = "rfb"

    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or RfbConfig()
        rng = np.random.default_rng(cfg.seed)
        c_in, size = 1, cfg.side
        for i, (c, s) in enumerate(zip(cfg.channels, cfg.strides)):
            fan = c_in * cfg.kernel**2
            self.params[f"conv{i}.w"] = _he(rng, (c, c_in, cfg.kernel, cfg.kernel), fan)
            self.params[f"conv{i}.b"] = _zeros((c,))
            c_in = c
            size = (size + 2 * (cfg.kernel // 2) - cfg.kernel) // s + 1
        self.trunk_size = c_in * size * size
        h = cfg.hidden
        self.params["cls.w1"] = _he(rng, (self.trunk_size, h), self.trunk_size)
        self.params["cls.b1"] = _zeros((h,))
        self.params["cls.w2"] = _he(rng, (h, N_CLASSES), h, gain=0.5)
        self.params["cls.b2"] = _zeros((N_CLASSES,))
        self.params["fuse.w"] = _he(rng, (N_CLASSES, self.trunk_size), N_CLASSES, gain=0.1)
        self.params["reg.w1"] = _he(rng, (self.trunk_size, h), self.trunk_size)
        self.params["reg.b1"] = _zeros((h,))
        self.params["reg.w2"] = _he(rng, (h, 6), h, gain=0.5)
        self.params["reg.b2"] = _zeros((6,))

    def forward(self, x, training=False, rng=None):
        """``x``: ``(B, side*side)`` or ``(B, 1, side, side)``; returns ``(logits, features)``."""
        cfg = self.config
        p = self.params
        x = ad.as_tensor(x)
        if x.size != x.shape[0] * cfg.side**2:
            raise ShapeError(f"RFB-Net expects {cfg.side}x{cfg.side} grids, got {x.shape}")
        h = ad.reshape(x, (x.shape[0], 1, cfg.side, cfg.side))
        if training and rng is None:
            rng = np.random.default_rng(cfg.seed)
        for i, s in enumerate(cfg.strides):
            h = ad.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=s)
            h = ad.gaussian_noise(h, cfg.noise_sigma, rng, training)
            h = ad.leaky_relu(h, cfg.slope)
            h = ad.dropout(h, cfg.dropout, rng, training)
        trunk = ad.reshape(h, (h.shape[0], self.trunk_size))
        c = ad.leaky_relu(ad.dense(trunk, p["cls.w1"], p["cls.b1"]), cfg.slope)
        logits = ad.dense(c, p["cls.w2"], p["cls.b2"])
        fused = ad.add(trunk, ad.matmul(logits, p["fuse.w"]))
        r = ad.leaky_relu(ad.dense(fused, p["reg.w1"], p["reg.b1"]), cfg.slope)
        features = ad.dense(r, p["reg.w2"], p["reg.b2"])
        return logits, features


@dataclass
class MsConfig:
    side: int = 32
    dim: int = 32
    channels: tuple = (16, 8, 2)
    kernel: int = 3
    slope: float = 0.2
    bn_momentum: float = 0.1
    mix: bool = True
    mix_hidden: int = 256
    mix_gain: float = 0.1
    bias_scale: float = 1.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.channels[-1] != 2:
            raise ShapeError("the last MS-NN block must produce exactly two channels")
        if self.side * self.side != self.dim * self.dim:
            raise ShapeError("MS-NN reshapes the grid into the density matrix; side must equal dim")


class MsModel(Model):
    mode = "msnn"

    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or MsConfig()
        rng = np.random.default_rng(cfg.seed)
        n = cfg.side * cfg.side
        self.params["embed.w"] = _he(rng, (N_CLASSES, n), N_CLASSES, gain=0.1)
        self.params["embed.b"] = _zeros((n,))
        c_in = 1
        last = len(cfg.channels) - 1
        for i, c in enumerate(cfg.channels):
            self.params[f"conv{i}.w"] = _he(rng, (c, c_in, cfg.kernel, cfg.kernel), c_in * cfg.kernel**2)
            self.params[f"conv{i}.b"] = _zeros((c,))
            if i < last:
                self.params[f"bn{i}.gamma"] = ad.Tensor(np.ones(c), requires_grad=True)
                self.params[f"bn{i}.beta"] = _zeros((c,))
                self.buffers[f"bn{i}.mean"] = np.zeros(c)
                self.buffers[f"bn{i}.var"] = np.ones(c)
            c_in = c
        if cfg.mix:
            # dense map over the flattened two-channel output: the conv stack
            # alone only sees a local patch of the grid for each matrix entry
            m = 2 * cfg.dim * cfg.dim
            if cfg.mix_hidden:
                self.params["mix.w1"] = _he(rng, (m, cfg.mix_hidden), m)
                self.params["mix.b1"] = _zeros((cfg.mix_hidden,))
                self.params["mix.w"] = _he(rng, (cfg.mix_hidden, m), cfg.mix_hidden, gain=cfg.mix_gain)
            else:
                self.params["mix.w"] = _he(rng, (m, m), m, gain=cfg.mix_gain)
            self.params["mix.b"] = _zeros((m,))
        # per-entry output offset; starts at the identity so the initial split
        # layer output is close to the maximally mixed state
        bias = np.zeros((2, cfg.dim, cfg.dim))
        bias[0] = cfg.bias_scale * np.eye(cfg.dim)
        self.params["out.bias"] = ad.Tensor(bias, requires_grad=True)

    def forward(self, x, onehot, training=False):
        """Returns the ``(B, 2, dim, dim)`` raw output tensor."""
        cfg = self.config
        p = self.params
        x = ad.as_tensor(x)
        bsz = x.shape[0]
        if x.size != bsz * cfg.side * cfg.side:
            raise ShapeError(f"MS-NN expects {cfg.side}x{cfg.side} grids, got {x.shape}")
        onehot = ad.as_tensor(onehot)
        if onehot.shape != (bsz, N_CLASSES):
            raise ShapeError(f"MS-NN label input must be ({bsz}, {N_CLASSES}), got {onehot.shape}")
        flat = ad.reshape(x, (bsz, cfg.side * cfg.side))
        h = ad.add(flat, ad.dense(onehot, p["embed.w"], p["embed.b"]))
        h = ad.reshape(h, (bsz, 1, cfg.side, cfg.side))
        last = len(cfg.channels) - 1
        for i in range(len(cfg.channels)):
            h = ad.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            if i < last:
                gamma, beta = p[f"bn{i}.gamma"], p[f"bn{i}.beta"]
                if training:
                    h, (mu, var) = ad.batch_norm(h, gamma, beta)
                    mom = cfg.bn_momentum
                    self.buffers[f"bn{i}.mean"] = (1 - mom) * self.buffers[f"bn{i}.mean"] + mom * mu
                    self.buffers[f"bn{i}.var"] = (1 - mom) * self.buffers[f"bn{i}.var"] + mom * var
                else:
                    stats = (self.buffers[f"bn{i}.mean"], self.buffers[f"bn{i}.var"])
                    h = ad.batch_norm(h, gamma, beta, stats=stats)
                h = ad.leaky_relu(h, cfg.slope)
        if cfg.mix:
            flat = ad.reshape(h, (bsz, 2 * cfg.dim * cfg.dim))
            if cfg.mix_hidden:
                flat = ad.leaky_relu(ad.dense(flat, p["mix.w1"], p["mix.b1"]), cfg.slope)
            h = ad.reshape(ad.dense(flat, p["mix.w"], p["mix.b"]), (bsz, 2, cfg.dim, cfg.dim))
        return ad.add(h, p["out.bias"])


def config_dict(model):
    return asdict(model.config)


def build_model(mode, config):
    if mode == "rfb":
        return RfbModel(RfbConfig(**config))
    if mode == "msnn":
        return MsModel(MsConfig(**config))
    raise ValueError(f"unknown model mode {mode!r}")
