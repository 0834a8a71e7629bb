"""Truncated path signatures of piecewise-linear embeddings.

A signature tensor holds, for each level h <= d, the p~^h iterated-integral
coefficients of the embedded path in lexicographic multi-index order, with
the level-0 coefficient fixed at 1 by convention.  Signatures of piecewise
linear paths are computed exactly: each linear segment contributes the
truncated tensor exponential of its increment, and consecutive segments are
combined with the concatenation (Chen) identity.  A slow quadrature oracle
(`brute_force_signature`) evaluates the same iterated integrals numerically
and is used only for verification.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateWindowError, ShapeError


def _level_sizes(alphabet_size: int, depth: int) -> list[int]:
    return [alphabet_size**h for h in range(depth + 1)]


def flat_length(alphabet_size: int, depth: int) -> int:
    """Total coefficient count of a depth-`depth` tensor over `alphabet_size` letters.

    Equals (p~^(d+1) - 1) / (p~ - 1) for p~ > 1 and d + 1 for p~ = 1.
    """
    if alphabet_size == 1:
        return depth + 1
    return (alphabet_size ** (depth + 1) - 1) // (alphabet_size - 1)


@dataclass(frozen=True)
class PathEmbedding:
    """Piecewise-linear path given by its vertices, one row per vertex."""

    vertices: np.ndarray  # (n, p~) float64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"vertices must be 2-d, got shape {v.shape}")
        if v.shape[0] < 2:
            raise DegenerateWindowError(f"path needs >= 2 vertices, got {v.shape[0]}")
        if v.shape[1] < 1:
            raise ShapeError("embedding dimension must be >= 1")
        if not np.isfinite(v).all():
            raise DegenerateWindowError("path vertices contain NaN or infinite values")
        object.__setattr__(self, "vertices", v)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def increments(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)


@dataclass(frozen=True)
class SigSpec:
    """Configuration for a signature computation."""

    depth: int
    time_augmented: bool = True
    channel_subset: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.depth < 1:
            raise ShapeError(f"depth must be >= 1, got {self.depth}")
        if self.channel_subset is not None:
            subset = tuple(self.channel_subset)
            if len(set(subset)) != len(subset):
                raise ShapeError("channel subset contains duplicates")
            object.__setattr__(self, "channel_subset", subset)


@dataclass
class SignatureTensor:
    """Level-graded signature coefficients over an alphabet of a fixed size."""

    alphabet_size: int
    depth: int
    levels: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        if len(self.levels) != self.depth + 1:
            raise ShapeError(
                f"expected {self.depth + 1} levels, got {len(self.levels)}"
            )
        sizes = _level_sizes(self.alphabet_size, self.depth)
        for h, (lvl, size) in enumerate(zip(self.levels, sizes)):
            if lvl.shape != (size,):
                raise ShapeError(f"level {h} has shape {lvl.shape}, expected ({size},)")

    @classmethod
    def identity(cls, alphabet_size: int, depth: int) -> "SignatureTensor":
        levels = [np.zeros(s) for s in _level_sizes(alphabet_size, depth)]
        levels[0][0] = 1.0
        return cls(alphabet_size, depth, levels)

    def coefficient(self, index: Sequence[int]) -> float:
        """Coefficient at a 1-based multi-index, e.g. (1, 2) for S_12."""
        h = len(index)
        flat = 0
        for i in index:
            if not 1 <= i <= self.alphabet_size:
                raise ShapeError(f"letter {i} outside alphabet 1..{self.alphabet_size}")
            flat = flat * self.alphabet_size + (i - 1)
        return float(self.levels[h][flat])


def embed_time_augmented(window: np.ndarray, channels: Sequence[int]) -> PathEmbedding:
    """Embed selected channels of a (p, delta) window with normalized time first.

    Vertex t has coordinate 0 equal to t / (delta - 1) and the remaining
    coordinates equal to the selected channels' samples, in the given order.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError(f"window must be 2-d, got shape {window.shape}")
    p, delta = window.shape
    if delta < 2:
        raise DegenerateWindowError(f"window length {delta} < 2")
    channels = list(channels)
    for c in channels:
        if not 0 <= c < p:
            raise IndexError(f"channel {c} out of range for {p}-channel window")
    vertices = np.empty((delta, len(channels) + 1))
    vertices[:, 0] = np.arange(delta) / (delta - 1)
    vertices[:, 1:] = window[channels].T
    return PathEmbedding(vertices)


def segment_signature(increment: np.ndarray, depth: int) -> SignatureTensor:
    """Signature of one linear segment: the truncated tensor exponential.

    The coefficient at (i1, ..., ih) is dv_{i1} * ... * dv_{ih} / h!.
    """
    if depth < 1:
        raise ShapeError(f"depth must be >= 1, got {depth}")
    v = np.asarray(increment, dtype=np.float64).ravel()
    if not np.isfinite(v).all():
        raise DegenerateWindowError("increment contains NaN or infinite values")
    levels = [np.ones(1)]
    for h in range(1, depth + 1):
        levels.append(np.kron(levels[h - 1], v) / h)
    return SignatureTensor(v.size, depth, levels)


def chen_concatenate(a: SignatureTensor, b: SignatureTensor) -> SignatureTensor:
    """Signature of the concatenated path: depth-truncated tensor product.

    Level-h output at (i1..ih) is sum over j of a_j(i1..ij) * b_{h-j}(i_{j+1}..ih);
    in the flattened lexicographic layout each term is a Kronecker product.
    """
    if a.alphabet_size != b.alphabet_size or a.depth != b.depth:
        raise ShapeError(
            f"tensor mismatch: ({a.alphabet_size}, depth {a.depth}) vs "
            f"({b.alphabet_size}, depth {b.depth})"
        )
    levels = []
    for h in range(a.depth + 1):
        out = np.zeros(a.alphabet_size**h)
        for j in range(h + 1):
            out += np.kron(a.levels[j], b.levels[h - j])
        levels.append(out)
    return SignatureTensor(a.alphabet_size, a.depth, levels)


def signature(path: PathEmbedding, depth: int) -> SignatureTensor:
    """Truncated signature of a piecewise-linear path.

    Left-to-right Chen fold of the per-segment tensor exponentials; exact for
    piecewise-linear paths up to floating-point rounding.
    """
    acc = SignatureTensor.identity(path.dim, depth)
    for inc in path.increments():
        acc = chen_concatenate(acc, segment_signature(inc, depth))
    return acc


def brute_force_signature(
    path: PathEmbedding, depth: int, subdivisions: int
) -> SignatureTensor:
    """Quadrature oracle: iterated integrals on a fine uniform parameter grid.

    The path is parametrized over [0, 1] with vertices at equal parameter
    steps and each iterated integral is evaluated by the trapezoid-rule
    recursion I_{w.i}(s) = integral of I_w dZ_i.  Converges to `signature`
    as subdivisions grow; intended for tests only.
    """
    if subdivisions < 100 * path.n:
        raise ShapeError(
            f"need >= {100 * path.n} subdivisions for {path.n} vertices, "
            f"got {subdivisions}"
        )
    p = path.dim
    grid = np.linspace(0.0, 1.0, subdivisions + 1)
    vertex_s = np.linspace(0.0, 1.0, path.n)
    z = np.stack(
        [np.interp(grid, vertex_s, path.vertices[:, i]) for i in range(p)]
    )
    dz = np.diff(z, axis=1)  # (p, K)

    levels = [np.ones(1)]
    # funcs[w] holds I_w evaluated at every grid point, level by level.
    funcs = np.ones((1, subdivisions + 1))
    for h in range(1, depth + 1):
        new_funcs = np.empty((p**h, subdivisions + 1))
        for w in range(p ** (h - 1)):
            prev = funcs[w]
            midpoints = 0.5 * (prev[:-1] + prev[1:])
            for i in range(p):
                acc = np.concatenate(([0.0], np.cumsum(midpoints * dz[i])))
                new_funcs[w * p + i] = acc
        funcs = new_funcs
        levels.append(funcs[:, -1].copy())
    return SignatureTensor(p, depth, levels)


@lru_cache(maxsize=64)
def level_index_names(alphabet_size: int, depth: int) -> tuple[str, ...]:
    """Per-level multi-index strings "h/(i1,...,ih)" in flattening order."""
    names = []
    for h in range(depth + 1):
        for idx in itertools.product(range(1, alphabet_size + 1), repeat=h):
            names.append(f"{h}/({','.join(map(str, idx))})")
    return tuple(names)


def flatten_values(sig: SignatureTensor) -> np.ndarray:
    """Levels 0..d concatenated in order, without names."""
    return np.concatenate(sig.levels)


def flatten(sig: SignatureTensor, name_prefix: str) -> tuple[np.ndarray, list[str]]:
    """Flatten a tensor into (values, names).

    Names follow "<prefix>/<level>/(i1,...,ih)" with 1-based letters; the
    output length obeys the dimension law of `flat_length`.
    """
    values = flatten_values(sig)
    names = [
        f"{name_prefix}/{suffix}"
        for suffix in level_index_names(sig.alphabet_size, sig.depth)
    ]
    return values, names
