"""Dilated causal convolutions, residual blocks, and the reconstruction TCN.

Everything runs on plain numpy in double precision. Sequence tensors are
(batch, time, channels) throughout. The default network is an input layer,
three residual blocks (two causal convolutions of 64 filters each, kernel
size 2, dilations 1/2/4, ReLU activations, additive skip path) and a linear
1x1 output projection back to the signal count. Left zero padding keeps
the output length equal to the input length, so the receptive field of the
last position is 1 + (1+1+2+2+4+4) = 15 samples.

Gradients are exact reverse-mode derivatives of the mean squared
reconstruction error; the ReLU subgradient at 0 is taken as 0. No weight
normalization, no dropout.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_FILTERS = 64
DEFAULT_KERNEL = 2
DEFAULT_DILATIONS = (1, 2, 4)
MAX_SIGNALS = 8

_MAGIC = b"CTCN"
_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is damaged, truncated, or of an unknown version."""


@dataclass
class ConvParams:
    """Weights of one causal 1-D convolution.

    ``w`` has shape (kernel, in_channels, out_channels); ``b`` has shape
    (out_channels,).
    """

    w: np.ndarray
    b: np.ndarray
    dilation: int = 1

    @property
    def kernel(self) -> int:
        return self.w.shape[0]

    @property
    def c_in(self) -> int:
        return self.w.shape[1]

    @property
    def c_out(self) -> int:
        return self.w.shape[2]


@dataclass
class ResidualBlock:
    """Two dilated causal convolutions plus a skip path.

    ``downsample`` is a 1x1 convolution matching channel counts and is
    present exactly when the block input width differs from its output
    width; otherwise the skip is the identity.
    """

    conv1: ConvParams
    conv2: ConvParams
    downsample: ConvParams | None = None

    def convs(self) -> list[ConvParams]:
        out = [self.conv1, self.conv2]
        if self.downsample is not None:
            out.append(self.downsample)
        return out


@dataclass
class TcnModel:
    blocks: list
    output_proj: ConvParams
    n_signals: int

    @property
    def receptive_field(self) -> int:
        span = 0
        for blk in self.blocks:
            for conv in (blk.conv1, blk.conv2):
                span += (conv.kernel - 1) * conv.dilation
        return 1 + span

    def parameters(self) -> list[np.ndarray]:
        """All weight/bias arrays in a fixed traversal order."""
        params = []
        for blk in self.blocks:
            for conv in blk.convs():
                params.extend((conv.w, conv.b))
        params.extend((self.output_proj.w, self.output_proj.b))
        return params

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def load_parameters(self, values: list) -> None:
        own = self.parameters()
        if len(own) != len(values):
            raise ValueError(f"expected {len(own)} arrays, got {len(values)}")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ValueError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def causal_conv1d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """y[b,t,o] = bias[o] + sum_j sum_c w[j,c,o] * x[b, t-(k-1-j)*d, c].

    Positions before the sequence start read zeros (left padding), so the
    output has the same length as the input and never looks at the future.
    """
    B, T, C = x.shape
    if C != p.c_in:
        raise ValueError(f"input has {C} channels, convolution expects {p.c_in}")
    x2 = x.reshape(B * T, C)
    y = np.empty((B, T, p.c_out), dtype=np.float64)
    y[...] = p.b
    for j in range(p.kernel):
        offset = (p.kernel - 1 - j) * p.dilation
        if offset >= T:
            continue
        tap = (x2 @ p.w[j]).reshape(B, T, p.c_out)
        if offset == 0:
            y += tap
        else:
            y[:, offset:, :] += tap[:, : T - offset, :]
    return y


def _conv_backward(x: np.ndarray, p: ConvParams, dy: np.ndarray):
    """Gradients of a causal conv: returns (dx, dw, db)."""
    B, T, _ = x.shape
    dw = np.zeros_like(p.w)
    db = dy.sum(axis=(0, 1))
    dx = np.zeros_like(x)
    for j in range(p.kernel):
        offset = (p.kernel - 1 - j) * p.dilation
        if offset >= T:
            continue
        x_past = x[:, : T - offset, :] if offset else x
        dy_fut = dy[:, offset:, :] if offset else dy
        dw[j] = np.tensordot(x_past, dy_fut, axes=([0, 1], [0, 1]))
        back = (
            np.ascontiguousarray(dy_fut).reshape(-1, p.c_out) @ p.w[j].T
        ).reshape(B, T - offset, p.c_in)
        if offset:
            dx[:, : T - offset, :] += back
        else:
            dx += back
    return dx, dw, db


def _block_forward(x: np.ndarray, blk: ResidualBlock, cache: list | None = None):
    """y = ReLU(conv2(ReLU(conv1(x))) + skip(x)); caches pre-activations."""
    z1 = causal_conv1d(x, blk.conv1)
    h1 = relu(z1)
    z2 = causal_conv1d(h1, blk.conv2)
    skip = causal_conv1d(x, blk.downsample) if blk.downsample is not None else x
    pre = z2 + skip
    y = relu(pre)
    if cache is not None:
        cache.append((x, z1 > 0, h1, pre > 0))
    return y


def residual_block_forward(x: np.ndarray, blk: ResidualBlock) -> np.ndarray:
    return _block_forward(x, blk)


def tcn_forward(x: np.ndarray, model: TcnModel) -> np.ndarray:
    """Reconstruct the input sequence; output shape equals input shape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, time, channels), got shape {x.shape}")
    if x.shape[2] != model.n_signals:
        raise ValueError(
            f"input has {x.shape[2]} channels, model expects {model.n_signals}"
        )
    h = x
    for blk in model.blocks:
        h = _block_forward(h, blk)
    return causal_conv1d(h, model.output_proj)


def mse_loss(y: np.ndarray, target: np.ndarray) -> float:
    if y.shape != target.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {target.shape}")
    diff = y - target
    return float(np.mean(diff * diff))


def backward(model: TcnModel, x: np.ndarray, target: np.ndarray):
    """Loss plus exact gradients, ordered like ``model.parameters()``."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.shape[2] != model.n_signals:
        raise ValueError(
            f"input has {x.shape[2]} channels, model expects {model.n_signals}"
        )
    caches: list = []
    h = x
    for blk in model.blocks:
        h = _block_forward(h, blk, caches)
    y = causal_conv1d(h, model.output_proj)
    if y.shape != target.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {target.shape}")

    diff = y - target
    loss = float(np.mean(diff * diff))
    dy = (2.0 / diff.size) * diff

    grads_rev: list[np.ndarray] = []
    dh, dw_out, db_out = _conv_backward(h, model.output_proj, dy)
    grads_rev.extend((db_out, dw_out))
    for blk, (bx, mask1, h1, mask_out) in zip(reversed(model.blocks), reversed(caches)):
        dpre = dh * mask_out
        dh1, dw2, db2 = _conv_backward(h1, blk.conv2, dpre)
        dz1 = dh1 * mask1
        dx_main, dw1, db1 = _conv_backward(bx, blk.conv1, dz1)
        if blk.downsample is not None:
            dx_skip, dw_d, db_d = _conv_backward(bx, blk.downsample, dpre)
            grads_rev.extend((db_d, dw_d))
        else:
            dx_skip = dpre
        grads_rev.extend((db2, dw2, db1, dw1))
        dh = dx_main + dx_skip
    return loss, list(reversed(grads_rev))


@dataclass
class AdamState:
    """First/second moment accumulators with bias correction."""

    m: list
    v: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: list, lr: float = 1e-4) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
        )


def adam_step(params: list, grads: list, state: AdamState):
    """One Adam update; mutates ``params`` and ``state`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(
    n_signals: int,
    seed: int,
    filters: int = DEFAULT_FILTERS,
    kernel: int = DEFAULT_KERNEL,
    dilations: tuple = DEFAULT_DILATIONS,
) -> TcnModel:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, per-seed
    deterministic."""
    if not 1 <= n_signals <= MAX_SIGNALS:
        raise ValueError(f"n_signals must be 1..{MAX_SIGNALS}, got {n_signals}")
    rng = np.random.default_rng(seed)
    blocks = []
    c_in = n_signals
    for d in dilations:
        conv1 = ConvParams(
            w=_he_uniform(rng, (kernel, c_in, filters), kernel * c_in),
            b=np.zeros(filters),
            dilation=d,
        )
        conv2 = ConvParams(
            w=_he_uniform(rng, (kernel, filters, filters), kernel * filters),
            b=np.zeros(filters),
            dilation=d,
        )
        down = None
        if c_in != filters:
            down = ConvParams(
                w=_he_uniform(rng, (1, c_in, filters), c_in),
                b=np.zeros(filters),
                dilation=1,
            )
        blocks.append(ResidualBlock(conv1, conv2, down))
        c_in = filters
    output = ConvParams(
        w=_he_uniform(rng, (1, filters, n_signals), filters),
        b=np.zeros(n_signals),
        dilation=1,
    )
    return TcnModel(blocks=blocks, output_proj=output, n_signals=n_signals)


def _arch_header(model: TcnModel) -> dict:
    return {
        "n_signals": model.n_signals,
        "filters": model.blocks[0].conv1.c_out,
        "kernel": model.blocks[0].conv1.kernel,
        "dilations": [blk.conv1.dilation for blk in model.blocks],
        "shapes": [list(p.shape) for p in model.parameters()],
    }


def save_model(model: TcnModel, path) -> None:
    """Versioned binary: magic, version, JSON header, float64 arrays in
    ``parameters()`` order."""
    header = json.dumps(_arch_header(model), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(_FORMAT_VERSION.to_bytes(4, "little"))
    buf.write(len(header).to_bytes(4, "little"))
    buf.write(header)
    for p in model.parameters():
        buf.write(np.ascontiguousarray(p, dtype=np.float64).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> TcnModel:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version = int.from_bytes(data[4:8], "little")
    if version != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    hlen = int.from_bytes(data[8:12], "little")
    if len(data) < 12 + hlen:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(data[12 : 12 + hlen])
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"unreadable header: {e}") from None
    model = init_model(
        n_signals=header["n_signals"],
        seed=0,
        filters=header["filters"],
        kernel=header["kernel"],
        dilations=tuple(header["dilations"]),
    )
    params = model.parameters()
    shapes = [tuple(s) for s in header["shapes"]]
    if shapes != [p.shape for p in params]:
        raise ModelFormatError("header shapes disagree with the declared architecture")
    pos = 12 + hlen
    for p in params:
        nbytes = p.size * 8
        if pos + nbytes > len(data):
            raise ModelFormatError("truncated parameter data")
        p[...] = np.frombuffer(data[pos : pos + nbytes], dtype=np.float64).reshape(p.shape)
        pos += nbytes
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes after parameters")
    return model
