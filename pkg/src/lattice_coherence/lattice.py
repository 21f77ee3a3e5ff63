"""Multi-index arithmetic on the torus Z_L^d and finite-support function arrays.

A :class:`LocalArray` is the convolution kernel of a spatially invariant
feedback operator.  Its Fourier symbol is available both on the finite torus
(:func:`dft_symbol`) and on the unit circle of the infinite lattice
(:func:`z_symbol`); the former is a sub-sample of the latter.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]

#: relative tolerance used by the structural predicates
PREDICATE_RTOL = 1e-12


class PreconditionError(ValueError):
    """An operation was called outside its domain (lattice too small, bad size...)."""


def torus_reduce(k: Sequence[int], L: int) -> MultiIndex:
    """Map ``k`` to the canonical representative of Z_L^d.

    Even L uses {-L/2, ..., L/2 - 1}, odd L uses {-(L-1)/2, ..., (L-1)/2}.
    """
    if L < 1:
        raise PreconditionError(f"lattice side must be positive, got {L}")
    lo = -(L // 2)
    return tuple((int(ki) - lo) % L + lo for ki in k)


def torus_add(k: Sequence[int], l: Sequence[int], L: int) -> MultiIndex:
    if len(k) != len(l):
        raise ValueError("multi-indices of different dimension")
    return torus_reduce([a + b for a, b in zip(k, l)], L)


def torus_indices(L: int, d: int) -> Iterator[MultiIndex]:
    """All canonical multi-indices of Z_L^d in lexicographic order."""
    lo = -(L // 2)
    return itertools.product(range(lo, lo + L), repeat=d)


def wavenumber_grid(L: int, d: int, include_zero: bool = False) -> np.ndarray:
    """Spatial frequencies 2*pi*n/L for every n in Z_L^d, shape (L**d, d)."""
    n = np.fft.fftfreq(L, 1.0 / L)
    mesh = np.meshgrid(*([n] * d), indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    if not include_zero:
        grid = grid[np.any(grid != 0, axis=1)]
    return 2.0 * np.pi * grid / L


@dataclass(frozen=True)
class LocalArray:
    """Finite-support array on Z^d, stored sparsely as ``{offset: value}``.

    ``value_kind`` is ``"scalar"`` for consensus arrays and ``"diagonal"`` for
    vehicular arrays whose d x d entries are identical multiples of the
    identity; only the scalar is stored in either case.
    """

    dimension: int
    entries: Mapping[MultiIndex, float] = field(default_factory=dict)
    value_kind: str = "scalar"

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.value_kind not in ("scalar", "diagonal"):
            raise ValueError(f"unknown value_kind {self.value_kind!r}")
        clean: dict[MultiIndex, float] = {}
        for k, v in self.entries.items():
            key = (int(k),) if np.isscalar(k) else tuple(int(x) for x in k)
            if len(key) != self.dimension:
                raise ValueError(f"offset {key} does not have dimension {self.dimension}")
            v = float(v)
            if not math.isfinite(v):
                raise ValueError(f"non-finite entry at offset {key}")
            if v != 0.0:
                clean[key] = clean.get(key, 0.0) + v
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @classmethod
    def zero(cls, dimension: int, value_kind: str = "scalar") -> "LocalArray":
        return cls(dimension, {}, value_kind)

    @property
    def support_radius(self) -> int:
        """Smallest q with all nonzero entries inside the box |k_i| <= q."""
        if not self.entries:
            return 0
        return max(abs(c) for k in self.entries for c in k)

    @property
    def total(self) -> float:
        return math.fsum(self.entries.values())

    @property
    def max_abs(self) -> float:
        """The sup-norm of the array."""
        return max((abs(v) for v in self.entries.values()), default=0.0)

    def is_zero(self) -> bool:
        return not self.entries

    def scaled(self, c: float) -> "LocalArray":
        return LocalArray(self.dimension, {k: c * v for k, v in self.entries.items()}, self.value_kind)

    def __add__(self, other: "LocalArray") -> "LocalArray":
        if other.dimension != self.dimension:
            raise ValueError("cannot add arrays of different dimension")
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out.get(k, 0.0) + v
        return LocalArray(self.dimension, out, self.value_kind)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "value_kind": self.value_kind,
            "offsets": [list(k) for k in self.entries],
            "values": list(self.entries.values()),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LocalArray":
        d = int(doc["dimension"])
        offsets = doc.get("offsets", [])
        values = doc.get("values", [])
        if len(offsets) != len(values):
            raise ValueError("offsets and values have different lengths")
        entries = {tuple(int(c) for c in np.atleast_1d(o)): float(v) for o, v in zip(offsets, values)}
        return cls(d, entries, doc.get("value_kind", "scalar"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LocalArray":
        return cls.from_dict(json.loads(text))


def _offsets_values(array: LocalArray) -> tuple[np.ndarray, np.ndarray]:
    if not array.entries:
        return np.zeros((0, array.dimension)), np.zeros(0)
    return np.array(list(array.entries), dtype=float), np.array(list(array.entries.values()))


def _as_frequencies(array: LocalArray, theta) -> tuple[np.ndarray, bool]:
    th = np.asarray(theta, dtype=float)
    d = array.dimension
    if d == 1:
        if th.ndim == 0 or th.shape == (1,):
            return th.reshape(1, 1), True
        if th.shape[-1] != 1:
            th = th[..., None]
        return th, False
    if th.shape == (d,):
        return th.reshape(1, d), True
    if th.ndim < 2 or th.shape[-1] != d:
        raise ValueError(f"expected frequencies of shape (..., {d}), got {th.shape}")
    return th, False


def z_symbol(array: LocalArray, theta) -> complex | np.ndarray:
    """Z-transform of ``array`` on the unit circle, sum_k a_k exp(-j theta.k).

    ``theta`` may be a d-tuple (returns a complex scalar) or an array of shape
    (..., d) (returns an array of shape (...)).  For d = 1 a bare float or a
    1-D array of frequencies is accepted as well.
    """
    th, scalar = _as_frequencies(array, theta)
    offsets, values = _offsets_values(array)
    if values.size:
        out = np.exp(-1j * (th @ offsets.T)) @ values
    else:
        out = np.zeros(th.shape[:-1], dtype=complex)
    return complex(out.reshape(-1)[0]) if scalar else out


def symbol_real_part(array: LocalArray, theta) -> float | np.ndarray:
    """Real part of the symbol written as sum(a) - sum_k a_k (1 - cos(theta.k))."""
    th, scalar = _as_frequencies(array, theta)
    offsets, values = _offsets_values(array)
    out = array.total - (1.0 - np.cos(th @ offsets.T)) @ values if values.size else np.zeros(th.shape[:-1])
    return float(out.reshape(-1)[0]) if scalar else out


def dft_symbol(array: LocalArray, n: Sequence[int], L: int) -> complex:
    """DFT of ``array`` on Z_L^d at wavenumber ``n`` (reduced mod L)."""
    check_lattice_size(array, L)
    n = torus_reduce(np.atleast_1d(n), L)
    if len(n) != array.dimension:
        raise ValueError(f"wavenumber {n} does not have dimension {array.dimension}")
    total = 0.0 + 0.0j
    for k, v in array.entries.items():
        phase = sum(a * b for a, b in zip(n, k)) % L  # exact integer reduction
        total += v * complex(np.exp(-2j * np.pi * phase / L))
    return total


def check_lattice_size(array: LocalArray, L: int) -> None:
    q = array.support_radius
    if L <= 2 * q:
        raise PreconditionError(
            f"lattice side L={L} is too small for support radius q={q}; need L >= {2 * q + 1}"
        )


def _tol(array: LocalArray) -> float:
    return PREDICATE_RTOL * array.max_abs


def is_relative(array: LocalArray) -> bool:
    """True iff the entries sum to zero (only differences are fed back)."""
    s = array.total  # exactly rounded, so exact cancellations give 0.0
    return s == 0.0 or abs(s) <= _tol(array)


def is_symmetric(array: LocalArray) -> bool:
    """True iff a_k == a_{-k} for every offset in the support."""
    tol = _tol(array)
    for k, v in array.entries.items():
        mirror = array.entries.get(tuple(-c for c in k), 0.0)
        if abs(v - mirror) > tol:
            return False
    return True


def circular_convolve(array: LocalArray, state: np.ndarray, L: int) -> np.ndarray:
    """h_k = sum_l a_{k-l} x_l on Z_L^d with wraparound.

    ``state`` is a flat vector of length L**d in row-major (C) order over the
    non-negative index representatives 0..L-1 of each coordinate.
    """
    check_lattice_size(array, L)
    d = array.dimension
    x = np.asarray(state)
    if x.ndim != 1 or x.shape[0] != L**d:
        raise PreconditionError(f"state has shape {x.shape}, expected ({L ** d},)")
    grid = x.reshape((L,) * d)
    out = np.zeros_like(grid, dtype=np.result_type(grid, float))
    for k, v in array.entries.items():
        # (A x)_m = sum_k a_k x_{m-k}
        out += v * np.roll(grid, shift=k, axis=tuple(range(d)))
    return out.ravel()


def standard_consensus_array(d: int, f_tilde: float) -> LocalArray:
    """Nearest-neighbour averaging: -2 d f at the centre, f at the 2d unit offsets."""
    if not f_tilde > 0:
        raise ValueError(f"gain must be positive, got {f_tilde}")
    entries: dict[MultiIndex, float] = {(0,) * d: -2.0 * d * f_tilde}
    for i in range(d):
        for s in (-1, 1):
            k = [0] * d
            k[i] = s
            entries[tuple(k)] = f_tilde
    return LocalArray(d, entries)


def nearest_neighbour_array(d: int, gain: float, absolute: float = 0.0) -> LocalArray:
    """Symmetric nearest-neighbour array with an optional absolute centre term.

    ``gain`` may be zero; ``absolute`` is subtracted from the centre entry so
    the entry sum becomes ``-absolute``.
    """
    entries: dict[MultiIndex, float] = {(0,) * d: -2.0 * d * gain - absolute}
    for i in range(d):
        for s in (-1, 1):
            k = [0] * d
            k[i] = s
            entries[tuple(k)] = gain
    return LocalArray(d, entries)
