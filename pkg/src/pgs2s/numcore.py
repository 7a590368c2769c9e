"""Dense numeric kernel shared by every learnable component.

Matrices are plain float64 numpy arrays. Learnable tensors live in
:class:`ParamBlock` objects that pair a value with a gradient slot, so
hand-written backward passes can accumulate into ``block.grad`` and the
optimizers below can update in place.
"""
from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ProbeError

DTYPE = np.float64


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def softmax_rows(x):
    x = np.asarray(x, dtype=DTYPE)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(x):
    x = np.asarray(x, dtype=DTYPE)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class ParamBlock:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy(self) -> "ParamBlock":
        return ParamBlock(self.name, self.value.copy(), self.grad.copy())


def zero_grads(blocks: Iterable[ParamBlock]) -> None:
    for b in blocks:
        b.zero_grad()


def check_finite_grads(blocks: Iterable[ParamBlock], context: str = "") -> None:
    for b in blocks:
        if not np.all(np.isfinite(b.grad)):
            n_bad = int(np.size(b.grad) - np.count_nonzero(np.isfinite(b.grad)))
            where = f" ({context})" if context else ""
            raise NumericError(
                f"non-finite gradient in block '{b.name}'{where}: "
                f"{n_bad}/{b.grad.size} entries, |value|max={np.nanmax(np.abs(b.value)):.3g}"
            )


def digest(blocks: Iterable[ParamBlock]) -> str:
    """Hash of the raw bytes of every value; used for freeze checks."""
    h = hashlib.sha256()
    for b in blocks:
        h.update(b.name.encode())
        h.update(b.value.tobytes())
    return h.hexdigest()


def clip_grad_norm(blocks: Sequence[ParamBlock], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(b.grad * b.grad)) for b in blocks)))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for b in blocks:
            b.grad *= scale
    return total


def sgd_step(blocks: Sequence[ParamBlock], lr: float, ascent: bool = False) -> None:
    """Plain gradient step, descent by default."""
    check_finite_grads(blocks, "sgd_step")
    sign = 1.0 if ascent else -1.0
    for b in blocks:
        b.value += sign * lr * b.grad


class SGD:
    def __init__(self, lr: float, ascent: bool = False):
        self.lr = lr
        self.ascent = ascent

    def step(self, blocks: Sequence[ParamBlock]) -> None:
        sgd_step(blocks, self.lr, self.ascent)


class Adam:
    """Adam with bias-corrected moments.

    Moment buffers are keyed by block name, so one optimizer instance must
    always see the same block set.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, ascent: bool = False):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.ascent = ascent
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, blocks: Sequence[ParamBlock]) -> None:
        check_finite_grads(blocks, "adam_step")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        sign = 1.0 if self.ascent else -1.0
        for blk in blocks:
            m = self._m.setdefault(blk.name, np.zeros_like(blk.value))
            v = self._v.setdefault(blk.name, np.zeros_like(blk.value))
            m *= b1
            m += (1.0 - b1) * blk.grad
            v *= b2
            v += (1.0 - b2) * blk.grad * blk.grad
            blk.value += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(blocks: Sequence[ParamBlock], state: Adam) -> None:
    state.step(blocks)


def make_optimizer(kind: str, lr: float, ascent: bool = False):
    if kind == "adam":
        return Adam(lr=lr, ascent=ascent)
    if kind == "sgd":
        return SGD(lr=lr, ascent=ascent)
    raise ValueError(f"unknown optimizer {kind!r}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _stream_key(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Counter-based (Philox) generator for a named sub-stream of ``seed``.

    Distinct ``stream`` keys give independent streams, so e.g. the
    exploration draws never shift the data-shuffling sequence.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_stream_key(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


def grad_check(f: Callable[[], float], blocks: Sequence[ParamBlock], h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central differences.

    ``f`` must recompute the loss from the current block values and fill
    ``block.grad`` with the analytic gradient (grads are zeroed before each
    call). Returns the maximum over probed coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    zero_grads(blocks)
    f()
    analytic = [b.grad.copy() for b in blocks]
    coords = [(bi, idx) for bi, b in enumerate(blocks) for idx in np.ndindex(b.shape)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else make_rng(0, "grad_check")
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for bi, idx in coords:
        b = blocks[bi]
        orig = b.value[idx]
        b.value[idx] = orig + h
        zero_grads(blocks)
        fp = f()
        b.value[idx] = orig - h
        zero_grads(blocks)
        fm = f()
        b.value[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ProbeError(f"loss non-finite when probing {b.name}{list(idx)}")
        num = (fp - fm) / (2.0 * h)
        err = abs(analytic[bi][idx] - num) / max(1.0, abs(num))
        worst = max(worst, err)
    zero_grads(blocks)
    for b, g in zip(blocks, analytic):
        b.grad[...] = g
    return worst
