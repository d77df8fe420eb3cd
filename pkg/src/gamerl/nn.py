"""Small convolutional policy/value network with hand-written gradients and Adam.

Layout: obs ``(B, 10, 10, 4)`` -> conv3x3(16) -> ReLU -> conv3x3(32) -> ReLU
-> flatten (H, W, C order) -> fc(256) -> ReLU -> one linear layer per head.
Convolutions use same padding and stride 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .kernels import adam_update, col2im, im2col

DEFAULT_HEADS = (("policy", 4), ("value", 1))


class ShapeError(ValueError):
    pass


class ConvPolicyNet:
    """Shared conv trunk with named linear heads.

    With the default heads, :meth:`forward` returns ``(logits, value)``.
    """

    def __init__(
        self,
        heads: Iterable[tuple[str, int]] = DEFAULT_HEADS,
        seed: int = 0,
        dtype=np.float32,
        board: int = 10,
        in_channels: int = 4,
        c1: int = 16,
        c2: int = 32,
        hidden: int = 256,
        head_scale: float = 1.0,
    ):
        self.heads = tuple((str(n), int(k)) for n, k in heads)
        self.board = board
        self.in_channels = in_channels
        self.c1, self.c2, self.hidden = c1, c2, hidden
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        def uni(shape, fan_in, scale=1.0):
            bound = scale / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        flat = board * board * c2
        p = {
            "conv1.w": uni((c1, in_channels, 3, 3), in_channels * 9),
            "conv1.b": np.zeros(c1, self.dtype),
            "conv2.w": uni((c2, c1, 3, 3), c1 * 9),
            "conv2.b": np.zeros(c2, self.dtype),
            "fc.w": uni((flat, hidden), flat),
            "fc.b": np.zeros(hidden, self.dtype),
        }
        for name, k in self.heads:
            p[f"{name}.w"] = uni((hidden, k), hidden, head_scale)
            p[f"{name}.b"] = np.zeros(k, self.dtype)
        self.params: dict[str, np.ndarray] = p
        self._cache: Optional[dict] = None

    # -- bookkeeping -------------------------------------------------------

    def astype(self, dtype) -> "ConvPolicyNet":
        net = self.copy()
        net.dtype = np.dtype(dtype)
        net.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return net

    def copy(self) -> "ConvPolicyNet":
        net = object.__new__(ConvPolicyNet)
        net.__dict__.update(self.__dict__)
        net.params = {k: v.copy() for k, v in self.params.items()}
        net._cache = None
        return net

    def zero_(self) -> "ConvPolicyNet":
        for v in self.params.values():
            v[...] = 0
        return self

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward / backward -----------------------------------------------

    def forward_heads(self, obs) -> dict[str, np.ndarray]:
        x = np.asarray(obs, dtype=self.dtype)
        n = self.board
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (n, n, self.in_channels):
            raise ShapeError(f"expected obs of shape (B, {n}, {n}, {self.in_channels}), got {np.shape(obs)}")
        B = x.shape[0]
        p = self.params

        cols1 = im2col(x, 3)
        z1 = cols1 @ p["conv1.w"].reshape(self.c1, -1).T + p["conv1.b"]
        a1 = np.maximum(z1, 0)
        cols2 = im2col(a1.reshape(B, n, n, self.c1), 3)
        z2 = cols2 @ p["conv2.w"].reshape(self.c2, -1).T + p["conv2.b"]
        a2 = np.maximum(z2, 0)
        flat = a2.reshape(B, -1)
        zf = flat @ p["fc.w"] + p["fc.b"]
        h = np.maximum(zf, 0)
        out = {name: h @ p[f"{name}.w"] + p[f"{name}.b"] for name, _ in self.heads}
        self._cache = {"B": B, "cols1": cols1, "z1": z1, "cols2": cols2, "z2": z2, "flat": flat, "zf": zf, "h": h}
        return out

    def forward(self, obs):
        """Head outputs for ``obs``; ``(logits, value)`` for the default heads.

        A single unbatched observation gives unbatched outputs.
        """
        single = np.ndim(obs) == 3
        out = self.forward_heads(obs)
        if self.heads == DEFAULT_HEADS:
            logits, value = out["policy"], out["value"][:, 0]
            return (logits[0], value[0]) if single else (logits, value)
        res = tuple(out[name] for name, _ in self.heads)
        return tuple(r[0] for r in res) if single else res

    def backward_heads(self, upstream: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(head output) for the cached forward pass."""
        c = self._cache
        if c is None:
            raise RuntimeError("backward called before forward")
        p = self.params
        B, n = c["B"], self.board
        grads: dict[str, np.ndarray] = {}

        dh = np.zeros_like(c["h"])
        for name, k in self.heads:
            g = upstream.get(name)
            if g is None:
                grads[f"{name}.w"] = np.zeros_like(p[f"{name}.w"])
                grads[f"{name}.b"] = np.zeros_like(p[f"{name}.b"])
                continue
            g = np.asarray(g, dtype=self.dtype).reshape(B, k)
            grads[f"{name}.w"] = c["h"].T @ g
            grads[f"{name}.b"] = g.sum(axis=0)
            dh += g @ p[f"{name}.w"].T

        dzf = dh * (c["zf"] > 0)
        grads["fc.w"] = c["flat"].T @ dzf
        grads["fc.b"] = dzf.sum(axis=0)
        da2 = (dzf @ p["fc.w"].T).reshape(B * n * n, self.c2)

        dz2 = da2 * (c["z2"] > 0)
        grads["conv2.w"] = (dz2.T @ c["cols2"]).reshape(p["conv2.w"].shape)
        grads["conv2.b"] = dz2.sum(axis=0)
        dcols2 = dz2 @ p["conv2.w"].reshape(self.c2, -1)
        da1 = col2im(dcols2, (B, n, n, self.c1), 3).reshape(B * n * n, self.c1)

        dz1 = da1 * (c["z1"] > 0)
        grads["conv1.w"] = (dz1.T @ c["cols1"]).reshape(p["conv1.w"].shape)
        grads["conv1.b"] = dz1.sum(axis=0)
        return grads

    def backward(self, dlogits, dvalue=None) -> dict[str, np.ndarray]:
        """Gradients for the default heads from d(loss)/d(logits) and d(loss)/d(value)."""
        B = self._cache["B"] if self._cache else 1
        up = {"policy": np.reshape(dlogits, (B, -1))}
        if dvalue is not None:
            up["value"] = np.reshape(dvalue, (B, 1))
        return self.backward_heads(up)

    def relu_pattern(self) -> tuple[np.ndarray, ...]:
        """Activation masks of the last forward pass (used to detect kink crossings)."""
        c = self._cache
        return (c["z1"] > 0, c["z2"] > 0, c["zf"] > 0)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "heads": [list(h) for h in self.heads],
            "board": self.board,
            "in_channels": self.in_channels,
            "c1": self.c1,
            "c2": self.c2,
            "hidden": self.hidden,
        }
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "ConvPolicyNet":
        params, meta = load_checkpoint(path)
        net = cls(
            heads=[tuple(h) for h in meta.get("heads", DEFAULT_HEADS)],
            board=meta.get("board", 10),
            in_channels=meta.get("in_channels", 4),
            c1=meta.get("c1", 16),
            c2=meta.get("c2", 32),
            hidden=meta.get("hidden", 256),
            dtype=dtype,
        )
        for k in net.params:
            if k not in params or params[k].shape != net.params[k].shape:
                raise ShapeError(f"checkpoint tensor {k!r} missing or mis-shaped")
            net.params[k] = params[k].astype(dtype)
        return net


# ---------------------------------------------------------------------------
# softmax with action masking
# ---------------------------------------------------------------------------


def softmax_logprob_entropy(logits, mask=None):
    """Masked softmax over the last axis.

    ``mask`` is a boolean array (True = disallowed) broadcastable to
    ``logits``, or an iterable of disallowed indices for 1-D logits.
    Returns ``(probs, logprobs, entropy)``; masked entries get probability 0
    and log-probability ``-inf``. Entropy is in nats.
    """
    z = np.asarray(logits, dtype=np.float64 if np.asarray(logits).dtype == np.float64 else np.float32)
    if mask is None:
        m = np.zeros(z.shape, dtype=bool)
    elif isinstance(mask, np.ndarray) and mask.dtype == bool:
        m = np.broadcast_to(mask, z.shape)
    else:
        m = np.zeros(z.shape, dtype=bool)
        idx = [int(a) for a in mask]
        m[..., idx] = True
    if np.any(m.all(axis=-1)):
        raise ValueError("every action is masked")
    zm = np.where(m, -np.inf, z)
    top = zm.max(axis=-1, keepdims=True)
    shifted = zm - top
    e = np.exp(shifted)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    logp = shifted - np.log(s)
    with np.errstate(invalid="ignore"):
        plogp = np.where(m, 0.0, probs * logp)
    entropy = -plogp.sum(axis=-1)
    return probs, logp, entropy


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: Mapping[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update applied in place; returns ``(params, state)``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        adam_update(p, g, state.m[name], state.v[name], b1, b2, state.lr, state.t, state.eps)
    return params, state


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   magic    8 bytes  b"GRLNET01"
#   n        u32      number of tensors
#   mlen     u32      length of the UTF-8 JSON metadata blob
#   meta     mlen bytes
#   n times: u16 name length, name (UTF-8), u8 ndim, ndim x u32 dims
#   payload  every tensor in table order, little-endian float32, row-major
# All integers are little-endian.
# ---------------------------------------------------------------------------

MAGIC = b"GRLNET01"


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    names = list(params)
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<II", len(names), len(blob))
    out += blob
    for name in names:
        arr = params[name]
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    for name in names:
        out += np.ascontiguousarray(params[name], dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a gamerl checkpoint")
    n, mlen = struct.unpack_from("<II", data, 8)
    off = 16
    meta = json.loads(data[off : off + mlen].decode())
    off += mlen
    table = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    params = {}
    for name, shape in table:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return params, meta


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------


def gradient_check(probes_per_layer: int = 50, seed: int = 0, h: float = 1e-3, net: Optional[ConvPolicyNet] = None):
    """Largest relative error between analytic and central-difference gradients.

    Runs in float64 on a single random observation with a random linear
    loss over every head. A probe whose ``+h``/``-h`` evaluations land on
    different ReLU activation patterns straddles a kink, where the finite
    difference is meaningless; such probes are redrawn.
    Returns ``max |a - n| / max(|a|, |n|)`` over probes (pairs with both
    magnitudes below 1e-9 count as exact).
    """
    rng = np.random.default_rng(seed)
    net = (net or ConvPolicyNet(seed=seed)).astype(np.float64)
    for name in net.params:
        if name.endswith(".b"):
            net.params[name] = rng.normal(0, 0.05, net.params[name].shape)
    obs = rng.normal(size=(1, net.board, net.board, net.in_channels))
    weights = {name: rng.normal(size=(1, k)) for name, k in net.heads}

    def loss():
        out = net.forward_heads(obs)
        return sum(float((out[n] * weights[n]).sum()) for n in weights)

    loss()
    grads = net.backward_heads(weights)
    base = net.relu_pattern()
    worst = 0.0
    for name, p in net.params.items():
        done = tries = 0
        while done < probes_per_layer and tries < 20 * probes_per_layer:
            tries += 1
            i = tuple(int(rng.integers(s)) for s in p.shape)
            old = p[i]
            p[i] = old + h
            lp = loss()
            pat_p = net.relu_pattern()
            p[i] = old - h
            lm = loss()
            pat_m = net.relu_pattern()
            p[i] = old
            if not all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, pat_p, pat_m)):
                continue
            num = (lp - lm) / (2 * h)
            ana = float(grads[name][i])
            scale = max(abs(num), abs(ana))
            if scale > 1e-9:
                worst = max(worst, abs(num - ana) / scale)
            done += 1
    return worst
