"""Finite dyadic grids on the unit cube.

The root cube is [0,1)^d.  Each cube at level k splits into 2^d children at
level k+1, down to a fixed finest level (the depth).  Weights and integrands
are densities that are constant on the finest-level cells, so every integral
is a finite sum over leaves.

Cubes are enumerated level by level and, inside each level, in lexicographic
(row-major) index order.  All reductions run in that fixed order, which makes
every derived quantity reproducible run to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

__all__ = [
    "Cube",
    "DyadicSystem",
    "Exponents",
    "average",
    "change_of_weight",
    "conjugate_exponent",
    "get_system",
    "leaf_cells",
    "lebesgue_measure",
    "weight_mass",
    "weighted_average",
]


class Cube(NamedTuple):
    """The half-open dyadic cube 2**-level * (index + [0,1)**d)."""

    level: int
    index: tuple[int, ...]

    def key(self) -> str:
        """Serialize as ``level:i0.i1...``, e.g. ``2:3`` or ``1:0.1``."""
        return f"{self.level}:{'.'.join(str(i) for i in self.index)}"

    @classmethod
    def from_key(cls, text: str) -> "Cube":
        level_part, sep, index_part = text.partition(":")
        if not sep:
            raise ValueError(f"malformed cube key {text!r}")
        try:
            level = int(level_part)
            index = tuple(int(tok) for tok in index_part.split("."))
        except ValueError as exc:
            raise ValueError(f"malformed cube key {text!r}") from exc
        return cls(level, index)


def conjugate_exponent(x: float) -> float:
    """Hoelder conjugate x' with 1' = inf and inf' = 1."""
    if x == 1.0:
        return math.inf
    if math.isinf(x):
        return 1.0
    return x / (x - 1.0)


@dataclass(frozen=True)
class Exponents:
    """Integrability exponent p in (1, inf) and sequence exponent r in [1, inf].

    The conjugates p' and r' are derived, never stored, so the defining
    identities 1/p + 1/p' = 1 and 1/r + 1/r' = 1 cannot drift.
    """

    p: float
    r: float

    def __post_init__(self) -> None:
        if not (1.0 < self.p < math.inf):
            raise ValueError(f"p must lie in (1, inf), got {self.p}")
        if not self.r >= 1.0:
            raise ValueError(f"r must lie in [1, inf], got {self.r}")

    @property
    def p_conj(self) -> float:
        return conjugate_exponent(self.p)

    @property
    def r_conj(self) -> float:
        return conjugate_exponent(self.r)


class DyadicSystem:
    """All dyadic subcubes of [0,1)**dimension down to a finest level.

    The tree is stored as flat arrays indexed by cube id (canonical order):

    - ``levels``, ``volumes``, ``parents``: one entry per cube,
    - ``cube_ancestors[c, j]``: id of the level-j ancestor of cube c
      (-1 for j above the cube's own level),
    - ``leaf_ancestors[x, j]``: id of the level-j ancestor of leaf x,
    - ``leaf_member[c, x]``: whether leaf x lies inside cube c.

    Leaf functions are arrays over leaves (finest cells) in canonical order;
    cube coefficients are arrays over all cubes.  The arrays owned by the
    system are frozen, and all methods treat their inputs as read-only.
    """

    def __init__(self, dimension: int, depth: int):
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        if depth < 0:
            raise ValueError(f"depth must be >= 0, got {depth}")
        self.dimension = dimension
        self.depth = depth

        counts = [2 ** (k * dimension) for k in range(depth + 1)]
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.level_offsets = offsets
        self.n_cubes = int(offsets[-1])
        self.n_leaves = counts[-1]

        levels = np.repeat(np.arange(depth + 1), counts)
        self.levels = levels
        self.volumes = 2.0 ** (-levels.astype(float) * dimension)
        self.leaf_volume = 2.0 ** (-float(depth) * dimension)

        parents = np.full(self.n_cubes, -1, dtype=np.int64)
        ancestors = np.full((self.n_cubes, depth + 1), -1, dtype=np.int64)
        cubes: list[Cube] = []
        for k in range(depth + 1):
            side = 2**k
            grid = np.indices((side,) * dimension).reshape(dimension, -1)
            span = slice(int(offsets[k]), int(offsets[k + 1]))
            for j in range(k + 1):
                shifted = tuple(grid >> (k - j))
                flat = np.ravel_multi_index(shifted, dims=(2**j,) * dimension)
                ancestors[span, j] = offsets[j] + flat
            if k > 0:
                flat = np.ravel_multi_index(tuple(grid >> 1), dims=(side // 2,) * dimension)
                parents[span] = offsets[k - 1] + flat
            cubes.extend(
                Cube(k, tuple(int(v) for v in grid[:, pos])) for pos in range(grid.shape[1])
            )
        self.parents = parents
        self.cube_ancestors = ancestors
        self.cubes = tuple(cubes)
        self._ids = {cube: cid for cid, cube in enumerate(cubes)}

        self.leaf_ids = np.arange(int(offsets[depth]), int(offsets[depth + 1]), dtype=np.int64)
        self.leaf_ancestors = ancestors[offsets[depth] :, :].copy()

        kids: list[list[int]] = [[] for _ in range(self.n_cubes)]
        for cid in range(int(offsets[1]) if depth else 0, self.n_cubes):
            kids[parents[cid]].append(cid)
        self.children = tuple(np.array(lst, dtype=np.int64) for lst in kids)

        member = np.zeros((self.n_cubes, self.n_leaves), dtype=bool)
        leaf_pos = np.arange(self.n_leaves)
        for j in range(depth + 1):
            member[self.leaf_ancestors[:, j], leaf_pos] = True
        self.leaf_member = member

        for arr in (
            self.level_offsets,
            self.levels,
            self.volumes,
            self.parents,
            self.cube_ancestors,
            self.leaf_ids,
            self.leaf_ancestors,
            self.leaf_member,
        ):
            arr.setflags(write=False)

    def __repr__(self) -> str:
        return f"DyadicSystem(dimension={self.dimension}, depth={self.depth})"

    # -- lookups ---------------------------------------------------------

    def id_of(self, cube: Cube) -> int:
        try:
            return self._ids[cube]
        except KeyError:
            raise KeyError(f"cube {cube} not in {self!r}") from None

    def cube_of(self, cid: int) -> Cube:
        return self.cubes[cid]

    def resolve(self, q) -> int:
        """Accept either a Cube or an integer cube id."""
        if isinstance(q, Cube):
            return self.id_of(q)
        cid = int(q)
        if not 0 <= cid < self.n_cubes:
            raise KeyError(f"cube id {cid} out of range for {self!r}")
        return cid

    def contains(self, outer: int, inner: int) -> bool:
        """Whether cube ``inner`` is a subset of cube ``outer`` (ids)."""
        lvl = self.levels[outer]
        return bool(self.levels[inner] >= lvl and self.cube_ancestors[inner, lvl] == outer)

    def leaves_mask(self, cid: int) -> np.ndarray:
        return self.leaf_ancestors[:, self.levels[cid]] == cid

    def descendants_mask(self, cid: int) -> np.ndarray:
        """Boolean mask over cubes Q with Q a subset of the given cube."""
        return self.cube_ancestors[:, self.levels[cid]] == cid

    # -- validation ------------------------------------------------------

    def as_leaf_values(self, values, name: str = "leaf function") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape != (self.n_leaves,):
            raise ValueError(f"{name} must have {self.n_leaves} entries, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} has non-finite entries")
        if np.any(arr < 0):
            raise ValueError(f"{name} has negative entries")
        return arr

    def as_cube_values(self, values, name: str = "cube coefficients") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape != (self.n_cubes,):
            raise ValueError(f"{name} must have {self.n_cubes} entries, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} has non-finite entries")
        if np.any(arr < 0):
            raise ValueError(f"{name} has negative entries")
        return arr

    # -- aggregation -----------------------------------------------------

    def cube_integrals(self, leaf_values) -> np.ndarray:
        """Integral of a leaf-constant density over every cube.

        Per-cube sums accumulate in leaf order, so results are reproducible.
        """
        contrib = np.asarray(leaf_values, dtype=float) * self.leaf_volume
        out = np.empty(self.n_cubes)
        for j in range(self.depth + 1):
            lo, hi = int(self.level_offsets[j]), int(self.level_offsets[j + 1])
            out[lo:hi] = np.bincount(
                self.leaf_ancestors[:, j] - lo, weights=contrib, minlength=hi - lo
            )
        return out

    def cube_averages(self, leaf_values) -> np.ndarray:
        return self.cube_integrals(leaf_values) / self.volumes

    def weighted_cube_averages(self, f, w) -> np.ndarray:
        """w-average of f over every cube, zero where the cube has no w-mass."""
        num = self.cube_integrals(np.asarray(f, dtype=float) * np.asarray(w, dtype=float))
        den = self.cube_integrals(w)
        positive = den > 0.0
        return np.where(positive, num / np.where(positive, den, 1.0), 0.0)

    def chain_values(self, per_cube) -> np.ndarray:
        """Gather cube values along each leaf's ancestor chain, shape (leaves, depth+1)."""
        return np.asarray(per_cube)[self.leaf_ancestors]


@lru_cache(maxsize=None)
def get_system(dimension: int, depth: int) -> DyadicSystem:
    """Shared immutable system instance for the given shape."""
    return DyadicSystem(dimension, depth)


def leaf_cells(system: DyadicSystem) -> list[Cube]:
    """The finest-level cells in canonical (lexicographic) order."""
    return [system.cube_of(int(cid)) for cid in system.leaf_ids]


def lebesgue_measure(q, system: DyadicSystem) -> float:
    return float(system.volumes[system.resolve(q)])


def weight_mass(w, q, system: DyadicSystem) -> float:
    """Mass of the weight w on a cube: sum of leaf values times cell volume."""
    w = system.as_leaf_values(w, "weight")
    return float(system.cube_integrals(w)[system.resolve(q)])


def average(f, q, system: DyadicSystem) -> float:
    """Lebesgue average of f over a cube."""
    f = system.as_leaf_values(f)
    return float(system.cube_averages(f)[system.resolve(q)])


def weighted_average(f, w, q, system: DyadicSystem) -> float:
    """w-weighted average of f over a cube; zero when the cube carries no w-mass."""
    f = system.as_leaf_values(f)
    w = system.as_leaf_values(w, "weight")
    return float(system.weighted_cube_averages(f, w)[system.resolve(q)])


def change_of_weight(u, p: float) -> np.ndarray:
    """Map a strictly positive weight u to u**(-1/(p-1)).

    This is the dual-weight substitution that turns a norm inequality against
    the measure u dx into the two-weight form; it requires u > 0 everywhere.
    """
    if not (1.0 < p < math.inf):
        raise ValueError(f"p must lie in (1, inf), got {p}")
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight has non-finite entries")
    if np.any(arr <= 0):
        raise ValueError("change of weight requires strictly positive leaf values")
    return arr ** (-1.0 / (p - 1.0))
