"""Positive dyadic averaging operators and the norms used to measure them.

Given nonnegative cube coefficients lam, the forward operator maps a leaf
density f to the cube-indexed family (lam_Q <f>_Q 1_Q)_Q.  Its formal adjoint
against a weight w sends a cube-indexed family g to the leaf function
sum_Q lam_Q <g_Q>_w(Q) averaged with w-mass; the scalar collapse S sums the
forward coefficients along each leaf's ancestor chain.

Cube-indexed output is measured in L^p(l^r): take the l^r norm over the
ancestor chain at each leaf, then the L^p norm against a weight.  r = inf
means the chain maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Cube, DyadicSystem

__all__ = [
    "LinearizationPartition",
    "SequenceFunction",
    "apply_S",
    "apply_S_localized",
    "apply_T",
    "apply_T_localized",
    "apply_T_star",
    "apply_T_star_localized",
    "dual_pairing",
    "linearization_partition",
    "lr_reduce",
    "maximal_function",
    "norm_Linf_lr",
    "norm_Lp",
    "norm_Lp_lr",
    "normalize_pointwise",
    "pointwise_lr",
    "pointwise_lr_all",
]


def lr_reduce(values: np.ndarray, r: float, axis: int) -> np.ndarray:
    """l^r reduction of nonnegative values along an axis; r = inf is the max."""
    if math.isinf(r):
        return values.max(axis=axis)
    if r == 1.0:
        return values.sum(axis=axis)
    return (values**r).sum(axis=axis) ** (1.0 / r)


@dataclass
class SequenceFunction:
    """A cube-indexed family of leaf functions, each supported in its cube.

    This general form exists for the pointwise-normalization reduction and for
    the averaging inequality on cube-indexed families; everywhere else the
    piecewise-constant special case (plain cube coefficients) suffices.
    """

    system: DyadicSystem
    data: np.ndarray  # shape (n_cubes, n_leaves)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=float)
        expected = (self.system.n_cubes, self.system.n_leaves)
        if arr.shape != expected:
            raise ValueError(f"sequence data must have shape {expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sequence data has non-finite entries")
        inside = arr * self.system.leaf_member
        if np.any(inside < 0):
            raise ValueError("sequence data has negative entries")
        # force support containment: the component of cube Q lives on Q only
        self.data = inside

    @classmethod
    def from_coefficients(cls, coeffs, system: DyadicSystem) -> "SequenceFunction":
        a = system.as_cube_values(coeffs)
        return cls(system, a[:, None] * system.leaf_member)

    def pointwise_norm(self, r: float) -> np.ndarray:
        """l^r norm over the cube index at every leaf."""
        return lr_reduce(self.data, r, axis=0)


def apply_T(f, system: DyadicSystem, lam) -> np.ndarray:
    """Forward operator: coefficient lam_Q <f>_Q for every cube Q."""
    f = system.as_leaf_values(f)
    lam = system.as_cube_values(lam)
    return lam * system.cube_averages(f)


def apply_T_localized(f, system: DyadicSystem, lam, top) -> np.ndarray:
    """Forward operator restricted to cubes contained in ``top``."""
    rid = system.resolve(top)
    out = apply_T(f, system, lam)
    return np.where(system.descendants_mask(rid), out, 0.0)


def apply_T_star(g, system: DyadicSystem, lam, w) -> np.ndarray:
    """Adjoint against the weight w, as a leaf function.

    ``g`` is either plain cube coefficients (the piecewise-constant family
    (a_Q 1_Q)_Q) or a general SequenceFunction.
    """
    return _adjoint(g, system, lam, w, top=None)


def apply_T_star_localized(g, system: DyadicSystem, lam, w, top) -> np.ndarray:
    """Adjoint summed only over cubes contained in ``top``."""
    return _adjoint(g, system, lam, w, top=system.resolve(top))


def _adjoint(g, system: DyadicSystem, lam, w, top) -> np.ndarray:
    lam = system.as_cube_values(lam)
    w = system.as_leaf_values(w, "weight")
    if isinstance(g, SequenceFunction):
        integrals = g.data @ (w * system.leaf_volume)
        contrib = lam * integrals / system.volumes
    else:
        a = system.as_cube_values(g)
        contrib = lam * a * (system.cube_integrals(w) / system.volumes)
    if top is not None:
        contrib = np.where(system.descendants_mask(top), contrib, 0.0)
    return system.chain_values(contrib).sum(axis=1)


def apply_S(f, system: DyadicSystem, lam) -> np.ndarray:
    """Scalar collapse: sum of forward coefficients along each leaf's chain."""
    return pointwise_lr_all(apply_T(f, system, lam), 1.0, system)


def apply_S_localized(f, system: DyadicSystem, lam, top) -> np.ndarray:
    return pointwise_lr_all(apply_T_localized(f, system, lam, top), 1.0, system)


def pointwise_lr_all(coeffs, r: float, system: DyadicSystem) -> np.ndarray:
    """l^r norm of the chain of cube coefficients above every leaf."""
    return lr_reduce(system.chain_values(coeffs), r, axis=1)


def pointwise_lr(coeffs, leaf, r: float, system: DyadicSystem) -> float:
    """l^r chain norm at one leaf cell."""
    lid = system.resolve(leaf)
    if system.levels[lid] != system.depth:
        raise ValueError(f"cube {system.cube_of(lid)} is not a leaf cell")
    pos = lid - int(system.level_offsets[system.depth])
    return float(pointwise_lr_all(coeffs, r, system)[pos])


def norm_Lp(h, w, p: float, system: DyadicSystem) -> float:
    """L^p norm of a leaf function against the weight w."""
    h = np.asarray(h, dtype=float)
    w = system.as_leaf_values(w, "weight")
    return float(np.dot(np.abs(h) ** p, w) * system.leaf_volume) ** (1.0 / p)


def norm_Lp_lr(out, w, p: float, r: float, system: DyadicSystem) -> float:
    """L^p(l^r) norm of cube-indexed output against the weight w."""
    if isinstance(out, SequenceFunction):
        v = out.pointwise_norm(r)
    else:
        v = pointwise_lr_all(system.as_cube_values(out, "output coefficients"), r, system)
    return norm_Lp(v, w, p, system)


def norm_Linf_lr(g, r: float, w, system: DyadicSystem) -> float:
    """w-essential sup of the pointwise l^r norm (max over w-positive leaves)."""
    if isinstance(g, SequenceFunction):
        v = g.pointwise_norm(r)
    else:
        v = pointwise_lr_all(system.as_cube_values(g), r, system)
    w = system.as_leaf_values(w, "weight")
    supported = v[w > 0]
    return float(supported.max()) if supported.size else 0.0


def dual_pairing(f, a, sigma, omega, lam, system: DyadicSystem) -> float:
    """Pairing sum_Q lam_Q <f sigma>_Q a_Q omega(Q) of the forward output with
    a piecewise-constant family, against omega.

    Computed cube by cube and cross-checked against the leafwise integral of
    sum_Q (output)_Q a_Q; the two must agree to 1e-12 relative.
    """
    f = system.as_leaf_values(f)
    a = system.as_cube_values(a)
    sigma = system.as_leaf_values(sigma, "weight")
    omega = system.as_leaf_values(omega, "weight")
    lam = system.as_cube_values(lam)

    coeffs = lam * system.cube_averages(f * sigma)
    by_cubes = float(np.dot(coeffs * a, system.cube_integrals(omega)))
    leafwise = system.chain_values(coeffs * a).sum(axis=1)
    by_leaves = float(np.dot(leafwise, omega) * system.leaf_volume)
    if abs(by_cubes - by_leaves) > 1e-12 * max(1.0, abs(by_cubes)):
        raise AssertionError(
            f"pairing mismatch: cube sum {by_cubes!r} vs leaf sum {by_leaves!r}"
        )
    return by_cubes


def maximal_function(f, w, system: DyadicSystem) -> np.ndarray:
    """Largest w-average of |f| over the cubes containing each leaf."""
    f = system.as_leaf_values(f)
    w = system.as_leaf_values(w, "weight")
    return system.chain_values(system.weighted_cube_averages(np.abs(f), w)).max(axis=1)


@dataclass
class LinearizationPartition:
    """Assignment of leaves to the cube realizing the chain maximum.

    ``assignment[x]`` is a cube id, or -1 on leaves where every chain
    coefficient vanishes.  The cells with a given cube id are returned by
    :meth:`cells`; distinct cubes get disjoint cells by construction.
    """

    system: DyadicSystem
    assignment: np.ndarray

    def cells(self, q) -> np.ndarray:
        """Leaf positions assigned to the given cube."""
        return np.flatnonzero(self.assignment == self.system.resolve(q))

    def as_dict(self) -> dict[int, np.ndarray]:
        out: dict[int, np.ndarray] = {}
        for cid in np.unique(self.assignment):
            if cid >= 0:
                out[int(cid)] = np.flatnonzero(self.assignment == cid)
        return out


def linearization_partition(f, lam, system: DyadicSystem) -> LinearizationPartition:
    """Partition of the set where the chain maximum is positive.

    Each such leaf is assigned to the largest cube in its chain whose forward
    coefficient attains the maximum (ties go to the coarser cube).
    """
    chain = system.chain_values(apply_T(f, system, lam))
    sup = chain.max(axis=1)
    first_level = chain.argmax(axis=1)  # argmax takes the first, hence coarsest, level
    rows = np.arange(system.n_leaves)
    assignment = np.where(sup > 0.0, system.leaf_ancestors[rows, first_level], -1)
    return LinearizationPartition(system, assignment)


def normalize_pointwise(g: SequenceFunction, r: float, w=None) -> SequenceFunction:
    """Scale the components at each leaf by the pointwise l^r norm there.

    Leaves with zero norm are left at zero, so the resulting pointwise norm is
    either 0 or 1 everywhere.  When a weight is supplied, leaves carrying no
    weight mass are zeroed as well: values there are invisible to any
    w-integral, and zero is the canonical representative.
    """
    system = g.system
    norms = g.pointwise_norm(r)
    scale = np.divide(
        1.0, np.where(norms > 0, norms, 1.0), out=np.zeros_like(norms), where=norms > 0
    )
    data = g.data * scale[None, :]
    if w is not None:
        w = system.as_leaf_values(w, "weight")
        data = data * (w > 0)
    return SequenceFunction(system, data)
