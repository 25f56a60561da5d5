"""Learned step-size fake quantization of the meta-embedding codebook."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import Reader, pack_header

SUPPORTED_BITS = (4, 8, 16)
MAGIC = b"LERGQCBK"


def qrange(b: int) -> tuple[int, int]:
    if b < 2:
        raise ValueError(f"bit length must be >= 2, got {b}")
    return -(2 ** (b - 1)), 2 ** (b - 1) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    f = np.floor(a)
    # a - f is exact, unlike a + 0.5 which rounds up just below one half
    return np.sign(x) * (f + (a - f >= 0.5))


def _check_step(delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)) or np.any(delta <= 0):
        raise ValueError("step sizes must be positive and finite")
    return delta


@dataclass
class QuantizedCodebook:
    grid: np.ndarray  # (c, d) integers
    step: np.ndarray  # (c,) positive
    b: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int64)
        self.step = _check_step(self.step)
        if self.b not in SUPPORTED_BITS:
            raise ValueError(f"b must be one of {SUPPORTED_BITS}")
        qmin, qmax = qrange(self.b)
        if self.grid.size and (self.grid.min() < qmin or self.grid.max() > qmax):
            raise ValueError("grid entry outside the representable range")
        if self.grid.ndim != 2 or self.grid.shape[0] != len(self.step):
            raise ValueError("grid/step shape mismatch")

    @property
    def c(self) -> int:
        return self.grid.shape[0]

    @property
    def d(self) -> int:
        return self.grid.shape[1]

    def to_bytes(self, config_hash: str | None = None) -> bytes:
        head = pack_header(MAGIC, "QQB", (self.c, self.d, self.b), config_hash)
        step = self.step.astype("<f4").tobytes()
        if self.b == 16:
            body = self.grid.astype("<i2").tobytes()
        elif self.b == 8:
            body = self.grid.astype("i1").tobytes()
        else:
            body = pack_nibbles(self.grid.ravel())
        return head + step + body

    @classmethod
    def from_bytes(cls, data: bytes, name="quantized codebook"):
        rd = Reader(data, name)
        (c, d, b), config_hash = rd.header(MAGIC, "QQB")
        step = rd.array("f4", c).astype(np.float64)
        if b == 16:
            grid = rd.array("i2", c * d)
        elif b == 8:
            grid = rd.array("i1", c * d)
        elif b == 4:
            grid = unpack_nibbles(rd.take((c * d + 1) // 2), c * d)
        else:
            raise ValueError(f"unsupported bit length {b}")
        rd.done()
        return cls(grid.reshape(c, d).astype(np.int64), step, b), config_hash


def pack_nibbles(values: np.ndarray) -> bytes:
    """Two's-complement 4-bit values, even index in the low nibble."""
    v = (np.asarray(values, dtype=np.int64) & 0xF).astype(np.uint8)
    if len(v) % 2:
        v = np.append(v, np.uint8(0))
    return (v[0::2] | (v[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_nibbles(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    v = np.empty(2 * len(b), dtype=np.int64)
    v[0::2] = b & 0xF
    v[1::2] = b >> 4
    v = v[:count]
    return np.where(v >= 8, v - 16, v)


def quantize(weights: np.ndarray, delta, b: int) -> QuantizedCodebook:
    delta = _check_step(delta)
    if b not in SUPPORTED_BITS:
        raise ValueError(f"b must be one of {SUPPORTED_BITS}")
    qmin, qmax = qrange(b)
    z = np.clip(np.asarray(weights, dtype=np.float64) / delta[:, None], qmin, qmax)
    return QuantizedCodebook(round_half_away(z).astype(np.int64), delta, b)


def dequantize(q: QuantizedCodebook) -> np.ndarray:
    return q.grid * q.step[:, None]


def fake_quantize(weights, delta, b: int, surrogate: bool = False) -> np.ndarray:
    """Quantize-dequantize in one pass.

    ``surrogate=True`` replaces rounding by the identity, giving the
    piecewise-linear clip-and-scale map used for gradient checks. Any bit
    length >= 2 is accepted here (b=32 is handy as a near-lossless control).
    """
    delta = _check_step(delta)
    qmin, qmax = qrange(b)
    z = np.clip(np.asarray(weights, dtype=np.float64) / delta[:, None], qmin, qmax)
    if not surrogate:
        z = round_half_away(z)
    return z * delta[:, None]


def qat_backward(grad_out, weights, delta, b: int, surrogate: bool = False, grad_scale: float = 1.0):
    """Straight-through gradients for the codebook and its step sizes.

    Inside the clip range the rounding is passed through unchanged; outside,
    the codebook gradient is blocked and the step-size gradient sees the clip
    bound. ``surrogate`` drops the ``round(z) - z`` term (rounding treated as
    the identity). ``grad_scale`` multiplies the step-size gradient only.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    delta = _check_step(delta)
    qmin, qmax = qrange(b)
    z = np.asarray(weights, dtype=np.float64) / delta[:, None]
    below = z < qmin
    above = z > qmax
    inside = ~(below | above)
    grad_w = np.where(inside, grad_out, 0.0)
    if surrogate:
        g = np.zeros_like(z)
    else:
        g = round_half_away(z) - z
    g = np.where(below, qmin, np.where(above, qmax, g))
    grad_delta = (grad_out * g).sum(axis=1) * grad_scale
    return grad_w, grad_delta


def lsq_grad_scale(c: int, d: int, b: int) -> float:
    return 1.0 / np.sqrt(c * d * qrange(b)[1])


def init_step(weights: np.ndarray, b: int) -> np.ndarray:
    """Per-row initial step ``2 * mean|w| / sqrt(Q_max)``, floored away from zero."""
    qmax = qrange(b)[1]
    step = 2.0 * np.abs(weights).mean(axis=1) / np.sqrt(qmax)
    return np.maximum(step, 1e-8)


@dataclass(frozen=True)
class StorageReport:
    codebook: float
    assignment: float
    placeholder: float

    @property
    def total(self) -> float:
        return self.codebook + self.assignment + self.placeholder

    def as_dict(self) -> dict:
        return {
            "codebook": self.codebook,
            "assignment": self.assignment,
            "placeholder": self.placeholder,
            "total": self.total,
        }


def storage_bytes(c: int, d: int, b: int, r: int, n: int, m: int) -> StorageReport:
    """Embedding-layer bytes: quantized codebook + steps, 2 u32 per assignment row,
    f32 placeholder centroids and one u32 placeholder index per pruned entity."""
    if m > n:
        raise ValueError("retained count exceeds entity count")
    return StorageReport(
        codebook=4.0 * c * (b / 32.0 * d + 1.0),
        assignment=8.0 * n,
        placeholder=4.0 * r * d + 4.0 * (n - m),
    )
