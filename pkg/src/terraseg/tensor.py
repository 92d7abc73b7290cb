"""Dense float64 tensors and the deterministic RNG used everywhere.

Tensors are immutable value objects: operations return new tensors and never
write into their inputs. The only mutable numeric state in the package lives
in the training engine's parameter buffers.

Image-like tensors use channel-first [C, H, W] layout throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "Tensor",
    "SeededRng",
    "mix_seed",
    "tensor_new",
    "tensor_random",
    "crop_center",
    "concat_channels",
    "pad_zero",
    "flatten",
    "reshape",
]

_MASK64 = (1 << 64) - 1


def mix_seed(*parts: int | str) -> int:
    """Mix any number of integers/strings into one 64-bit seed.

    splitmix64 finalizer applied per part. Pure integer arithmetic mod 2^64,
    so the result is identical on every platform and Python version (unlike
    built-in hash(), which is salted per process).
    """
    h = 0x9E3779B97F4A7C15
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                h = _splitmix64((h ^ b) * 0x100000001B3 & _MASK64)
        else:
            h = _splitmix64((h ^ (int(part) & _MASK64)) & _MASK64)
    return h


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SeededRng:
    """Deterministic random source: numpy PCG64 under a fixed 64-bit seed.

    The generator algorithm is pinned (PCG64, the numpy default bit
    generator) so the same seed yields bit-identical streams across runs and
    platforms. Children derived via :meth:`spawn` mix the parent seed with
    the given key parts (splitmix64), giving independent reproducible
    streams for e.g. per-epoch shuffles or per-fold training runs.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ParameterError(f"seed must be an integer, got {seed!r}")
        self.seed = seed & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape: tuple[int, ...] = ()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def spawn(self, *key: int | str) -> "SeededRng":
        return SeededRng(mix_seed(self.seed, *key))


@dataclass(frozen=True)
class Tensor:
    """Immutable dense float64 array with optional debug name.

    Invariants: every extent >= 1, dtype float64, C-contiguous row-major
    memory. Construct through :func:`tensor_new` / the ops below, or wrap an
    existing ndarray (which is reused without copying when already
    conforming; callers must not mutate it afterwards).
    """

    data: np.ndarray
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = self.data
        if not isinstance(arr, np.ndarray):
            arr = np.asarray(arr, dtype=np.float64)
        if arr.dtype != np.float64 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            raise ShapeError("tensors must have at least one axis")
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"every extent must be >= 1, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}{list(self.shape)}"


def tensor_new(shape: tuple[int, ...], fill: float = 0.0, name: str | None = None) -> Tensor:
    """Allocate a tensor of the given shape filled with a constant."""
    _check_shape(shape)
    return Tensor(np.full(shape, float(fill), dtype=np.float64), name=name)


def tensor_random(
    shape: tuple[int, ...],
    rng: SeededRng,
    low: float = 0.0,
    high: float = 1.0,
    name: str | None = None,
) -> Tensor:
    """Uniform random tensor on [low, high). Bit-identical per (seed, shape)."""
    _check_shape(shape)
    if not (low < high):
        raise ParameterError(f"require low < high, got [{low}, {high})")
    return Tensor(rng.uniform(low, high, tuple(shape)), name=name)


def crop_center(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Center-crop the trailing two (spatial) axes to out_h x out_w.

    The crop offset is floor((src - dst) / 2) on each axis, so an off-by-one
    surplus lands on the bottom/right side.
    """
    if t.data.ndim < 2:
        raise ShapeError("crop_center needs at least 2 axes")
    h, w = t.shape[-2], t.shape[-1]
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise ShapeError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    oy, ox = (h - out_h) // 2, (w - out_w) // 2
    return Tensor(t.data[..., oy : oy + out_h, ox : ox + out_w].copy(), name=t.name)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [..., C, H, W] tensors along the channel axis."""
    if a.data.ndim < 3 or b.data.ndim < 3:
        raise ShapeError("concat_channels needs [C, H, W]-like tensors")
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"spatial dims differ: {a.shape} vs {b.shape}")
    return Tensor(np.concatenate([a.data, b.data], axis=-3))


def pad_zero(t: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the trailing two axes symmetrically by (pad_h, pad_w)."""
    if pad_h < 0 or pad_w < 0:
        raise ParameterError("padding must be non-negative")
    if t.data.ndim < 2:
        raise ShapeError("pad_zero needs at least 2 axes")
    widths = [(0, 0)] * (t.data.ndim - 2) + [(pad_h, pad_h), (pad_w, pad_w)]
    return Tensor(np.pad(t.data, widths), name=t.name)


def flatten(t: Tensor) -> Tensor:
    return Tensor(t.data.reshape(-1).copy(), name=t.name)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    _check_shape(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elems) to {shape}")
    return Tensor(t.data.reshape(shape).copy(), name=t.name)


def _check_shape(shape) -> None:
    if len(shape) == 0:
        raise ShapeError("shape must have at least one axis")
    for e in shape:
        if not isinstance(e, (int, np.integer)) or isinstance(e, bool) or e < 1:
            raise ShapeError(f"extents must be positive integers, got {tuple(shape)}")
