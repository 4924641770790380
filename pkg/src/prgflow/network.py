"""From-scratch convolutional warp regressor.

Each cascade block is a fixed architecture: four 3x3 stride-2
convolutions with leaky-ReLU(0.1), followed by a dense head whose output
dimension equals the block model's degrees of freedom.  Forward and
backward passes are implemented directly on numpy arrays (im2col +
matmul) so gradients are exact and runs are deterministic.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .estimators import CascadeConfig
from .warps import WarpModel

LEAK = 0.1

# Conv channel widths per preset; four stride-2 layers then a dense head.
PRESETS = {
    "tiny": (3, 4, 6, 6),
    "small": (8, 16, 32, 32),
    "large": (32, 64, 128, 128),
}


@dataclass
class BlockWeights:
    """One cascade block: conv (kernel, bias) pairs and a dense head."""

    kernels: list  # of (3,3,Cin,Cout) arrays
    biases: list  # of (Cout,) arrays
    dense_w: np.ndarray  # (flatten_dim, dof)
    dense_b: np.ndarray  # (dof,)

    def arrays(self) -> list:
        out = []
        for k, b in zip(self.kernels, self.biases):
            out.extend([k, b])
        out.extend([self.dense_w, self.dense_b])
        return out

    def set_arrays(self, arrs: list) -> None:
        n = len(self.kernels)
        for i in range(n):
            self.kernels[i] = arrs[2 * i]
            self.biases[i] = arrs[2 * i + 1]
        self.dense_w = arrs[2 * n]
        self.dense_b = arrs[2 * n + 1]


@dataclass
class ModelWeights:
    """Cascaded regressor weights plus configuration metadata."""

    cascade: CascadeConfig
    blocks: list  # of BlockWeights, one per cascade block
    input_channels: int = 2
    input_size: int = 128
    seed: int = 0

    def arrays(self) -> list:
        out = []
        for b in self.blocks:
            out.extend(b.arrays())
        return out

    def set_arrays(self, arrs: list) -> None:
        i = 0
        for b in self.blocks:
            n = len(b.arrays())
            b.set_arrays(arrs[i : i + n])
            i += n


def init_weights(cascade: CascadeConfig, widths=PRESETS["small"], input_channels: int = 2,
                 input_size: int = 128, seed: int = 0) -> ModelWeights:
    """He-uniform initialization from the seed; zero biases."""
    rng = np.random.default_rng(seed)
    blocks = []
    out_size = input_size
    for _ in widths:
        out_size = (out_size + 1) // 2
    for model in cascade.blocks:
        kernels, biases = [], []
        cin = input_channels
        for cout in widths:
            fan_in = 9 * cin
            lim = np.sqrt(6.0 / fan_in)
            kernels.append(rng.uniform(-lim, lim, (3, 3, cin, cout)))
            biases.append(np.zeros(cout))
            cin = cout
        flat = out_size * out_size * widths[-1]
        lim = np.sqrt(6.0 / flat)
        dense_w = rng.uniform(-lim, lim, (flat, model.dof))
        blocks.append(BlockWeights(kernels, biases, dense_w, np.zeros(model.dof)))
    return ModelWeights(cascade, blocks, input_channels, input_size, seed)


def _im2col(x: np.ndarray):
    """(B,H,W,C) -> patches (B,Ho,Wo,9*C) for a padded 3x3 stride-2 conv."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    win = win[:, ::2, ::2]  # (B,Ho,Wo,C,3,3)
    b, ho, wo, c = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, ho, wo, 9 * c)


def _col2im(cols: np.ndarray, in_shape) -> np.ndarray:
    """Adjoint of _im2col: scatter (B,Ho,Wo,9*C) back onto (B,H,W,C)."""
    b, h, w, c = in_shape
    ho, wo = cols.shape[1], cols.shape[2]
    xp = np.zeros((b, h + 2, w + 2, c))
    cols = cols.reshape(b, ho, wo, 3, 3, c)
    for dy in range(3):
        for dx in range(3):
            xp[:, dy : dy + 2 * ho : 2, dx : dx + 2 * wo : 2] += cols[:, :, :, dy, dx]
    return xp[:, 1 : h + 1, 1 : w + 1]


def _conv_forward(x, kernel, bias):
    cols = _im2col(x)
    cout = kernel.shape[3]
    w = kernel.transpose(0, 1, 2, 3).reshape(9 * kernel.shape[2], cout)
    return cols, cols @ w + bias


def block_forward(bw: BlockWeights, stack: np.ndarray, need_cache: bool = False):
    """Forward pass of one block on a (B,H,W,C) or (H,W,C) stack."""
    single = stack.ndim == 3
    x = stack[None] if single else stack
    cache = []
    for k, b in zip(bw.kernels, bw.biases):
        cols, z = _conv_forward(x, k, b)
        a = np.where(z > 0, z, LEAK * z)
        if need_cache:
            cache.append((x.shape, cols, z))
        x = a
    flat = x.reshape(x.shape[0], -1)
    out = flat @ bw.dense_w + bw.dense_b
    if need_cache:
        cache.append((x.shape, flat))
    if single:
        out = out[0]
    return (out, cache) if need_cache else out


def block_backward(bw: BlockWeights, cache, upstream: np.ndarray):
    """Exact gradients of the block w.r.t. its weights.

    upstream is dL/d(output), shape (B, dof) or (dof,).  Returns a
    BlockWeights-shaped list of arrays (same order as .arrays()).
    """
    if upstream.ndim == 1:
        upstream = upstream[None]
    act_shape, flat = cache[-1]
    g_dense_w = flat.T @ upstream
    g_dense_b = upstream.sum(axis=0)
    g = (upstream @ bw.dense_w.T).reshape(act_shape)
    conv_grads = []
    for (x_shape, cols, z), k in zip(reversed(cache[:-1]), reversed(bw.kernels)):
        g = g * np.where(z > 0, 1.0, LEAK)
        cout = k.shape[3]
        gw = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, cout)
        conv_grads.append((gw.reshape(k.shape), g.sum(axis=(0, 1, 2))))
        w = k.reshape(9 * k.shape[2], cout)
        gcols = g @ w.T
        g = _col2im(gcols, x_shape)
    grads = []
    for gw, gb in reversed(conv_grads):
        grads.extend([gw, gb])
    grads.extend([g_dense_w, g_dense_b])
    return grads


def cnn_forward(bw: BlockWeights, stack: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of one block; returns the warp vector."""
    return block_forward(bw, stack)


def count_params_flops(weights: ModelWeights):
    """Exact parameter and multiply-accumulate counts from declared shapes."""
    params = 0
    macs = 0
    for bw in weights.blocks:
        size = weights.input_size
        for k, b in zip(bw.kernels, bw.biases):
            params += k.size + b.size
            size = (size + 1) // 2
            macs += size * size * k.shape[3] * 9 * k.shape[2]
        params += bw.dense_w.size + bw.dense_b.size
        macs += bw.dense_w.size
    return params, macs


# --- ADAM -------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, arrays: list) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(arrays: list, grads: list, state: AdamState, t: int,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard bias-corrected ADAM update; returns (arrays', state)."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        mh = state.m[i] / (1 - beta1**t)
        vh = state.v[i] / (1 - beta2**t)
        out.append(a - lr * mh / (np.sqrt(vh) + eps))
    return out, state


# --- weights file format ------------------------------------------------------

_MAGIC = b"PRGW"
_VERSION = 1


def save_weights(weights: ModelWeights, path) -> None:
    """Binary format: magic, version u32 LE, header length u32 LE, UTF-8
    header text, then all parameters as little-endian float32 in
    declaration order."""
    lines = [
        f"cascade={weights.cascade.describe()}",
        f"input_channels={weights.input_channels}",
        f"input_size={weights.input_size}",
        f"seed={weights.seed}",
    ]
    for i, bw in enumerate(weights.blocks):
        for j, k in enumerate(bw.kernels):
            lines.append(f"block{i}.conv{j}=" + ",".join(str(d) for d in k.shape))
        lines.append(f"block{i}.dense=" + ",".join(str(d) for d in bw.dense_w.shape))
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for a in weights.arrays():
            f.write(a.astype("<f4").tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("not a model weights file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported weights version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = f.read(hlen).decode("utf-8")
        meta = {}
        shapes = {}
        for line in header.strip().splitlines():
            key, val = line.split("=", 1)
            if key.startswith("block"):
                shapes[key] = tuple(int(v) for v in val.split(","))
            else:
                meta[key] = val
        cascade = CascadeConfig.parse(meta["cascade"])
        blocks = []
        for i, model in enumerate(cascade.blocks):
            kernels, biases = [], []
            j = 0
            while f"block{i}.conv{j}" in shapes:
                shp = shapes[f"block{i}.conv{j}"]
                kernels.append(_read_array(f, shp))
                biases.append(_read_array(f, (shp[3],)))
                j += 1
            dw = _read_array(f, shapes[f"block{i}.dense"])
            db = _read_array(f, (shapes[f"block{i}.dense"][1],))
            blocks.append(BlockWeights(kernels, biases, dw, db))
        return ModelWeights(
            cascade,
            blocks,
            input_channels=int(meta["input_channels"]),
            input_size=int(meta["input_size"]),
            seed=int(meta["seed"]),
        )


def _read_array(f, shape) -> np.ndarray:
    n = int(np.prod(shape))
    data = np.frombuffer(f.read(4 * n), dtype="<f4").astype(float)
    return data.reshape(shape)
