"""Auxiliary norm inequalities, verified numerically on concrete data.

Three ingredients feed the main testing-characterization bound:

- an averaging inequality for cube-indexed families: replacing each
  component by its weighted average over its cube costs at most a constant
  that depends only on the outer and sequence exponents;
- the martingale maximal inequality for the level filtration (scalar and
  vector forms, with constants p' and p respectively);
- an embedding for sparse-in-measure cube families whose residual sets keep
  at least half of each cube's mass.

Every check records both sides of the inequality and the constant used, and
"holds" means lhs <= rhs * (1 + tol) with the shared relative tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DyadicSystem, conjugate_exponent
from .operators import SequenceFunction, maximal_function, norm_Lp, norm_Lp_lr

__all__ = [
    "EXACT_TOL",
    "FamilyPreconditionError",
    "InequalityCheck",
    "REL_TOL",
    "stein_constant",
    "verify_carleson",
    "verify_doob",
    "verify_stein",
    "worst_case_check",
]

REL_TOL = 1e-9
EXACT_TOL = 1e-12


class FamilyPreconditionError(ValueError):
    """A cube family fails the structural hypotheses of an embedding."""


@dataclass(frozen=True)
class InequalityCheck:
    """One verified inequality: lhs <= constant-scaled rhs, with slack."""

    name: str
    lhs: float
    rhs: float
    constant: float
    holds: bool
    slack: float

    @classmethod
    def compare(
        cls, name: str, lhs: float, rhs: float, constant: float = math.nan, tol: float = REL_TOL
    ) -> "InequalityCheck":
        lhs = float(lhs)
        rhs = float(rhs)
        return cls(name, lhs, rhs, constant, bool(lhs <= rhs * (1.0 + tol)), rhs - lhs)

    @classmethod
    def exact_count(cls, name: str, violations: int) -> "InequalityCheck":
        """Set-theoretic check: the number of violations must be zero."""
        v = float(violations)
        return cls(name, v, 0.0, math.nan, violations == 0, -v)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "constant": None if math.isnan(self.constant) else self.constant,
            "holds": self.holds,
            "slack": self.slack,
        }


def worst_case_check(
    name: str,
    lhs_values: np.ndarray,
    rhs_values: np.ndarray,
    constant: float = math.nan,
    tol: float = REL_TOL,
) -> InequalityCheck:
    """Pointwise family of inequalities reported at the worst pair.

    ``holds`` requires every entry to pass; the recorded sides come from the
    entry with the smallest slack, or 0 <= 0 for an empty family.
    """
    lhs_values = np.atleast_1d(np.asarray(lhs_values, dtype=float))
    rhs_values = np.atleast_1d(np.asarray(rhs_values, dtype=float))
    if lhs_values.size == 0:
        return InequalityCheck(name, 0.0, 0.0, constant, True, 0.0)
    worst = int(np.argmax(lhs_values - rhs_values))
    all_hold = bool(np.all(lhs_values <= rhs_values * (1.0 + tol)))
    lhs, rhs = float(lhs_values[worst]), float(rhs_values[worst])
    return InequalityCheck(name, lhs, rhs, constant, all_hold, rhs - lhs)


def stein_constant(p_conj: float, r_conj: float) -> float:
    """Constant for the cube-family averaging inequality in L^{p'}(l^{r'}).

    Equals (p'/r')**(1/r') when p' >= r' and (p/r)**(1/r) otherwise, with the
    convention x**(1/inf) = 1; both branches give 1 on the diagonal p' = r'.
    """
    if not p_conj > 1.0 or math.isinf(p_conj):
        raise ValueError(f"outer exponent must lie in (1, inf), got {p_conj}")
    if not r_conj >= 1.0:
        raise ValueError(f"sequence exponent must lie in [1, inf], got {r_conj}")
    if p_conj >= r_conj:
        if math.isinf(r_conj):
            return 1.0
        return (p_conj / r_conj) ** (1.0 / r_conj)
    p = conjugate_exponent(p_conj)
    r = conjugate_exponent(r_conj)
    if math.isinf(r):
        return 1.0
    return (p / r) ** (1.0 / r)


def verify_stein(
    g: SequenceFunction,
    omega,
    p_conj: float,
    r_conj: float,
    system: DyadicSystem,
    tol: float = REL_TOL,
) -> InequalityCheck:
    """Averaging each component over its cube against the original family."""
    omega = system.as_leaf_values(omega, "weight")
    numerators = (g.data * (omega * system.leaf_volume)[None, :]).sum(axis=1)
    masses = system.cube_integrals(omega)
    positive = masses > 0.0
    averaged = np.where(positive, numerators / np.where(positive, masses, 1.0), 0.0)
    lhs = norm_Lp_lr(averaged, omega, p_conj, r_conj, system)
    constant = stein_constant(p_conj, r_conj)
    rhs = constant * norm_Lp_lr(g, omega, p_conj, r_conj, system)
    return InequalityCheck.compare("stein-averaging", lhs, rhs, constant, tol)


def _level_conditionals(system: DyadicSystem, funcs: list[np.ndarray], w) -> np.ndarray:
    """Stack of E_w(g_j | level j) evaluated at the leaves, one row per level."""
    rows = []
    for j, g in enumerate(funcs):
        avg = system.weighted_cube_averages(g, w)
        rows.append(avg[system.leaf_ancestors[:, j]])
    return np.stack(rows)


def verify_doob(g, w, p: float, mode: str, system: DyadicSystem, tol: float = REL_TOL) -> InequalityCheck:
    """Martingale maximal inequality for the dyadic level filtration.

    ``scalar``: one leaf function, the running maximum of its conditional
    expectations, constant p'.  ``linf``: one function per level, max across
    levels, constant p'.  ``l1``: one function per level, sums across levels,
    constant p.
    """
    p_conj = conjugate_exponent(p)
    w = system.as_leaf_values(w, "weight")
    if mode == "scalar":
        lhs = norm_Lp(maximal_function(g, w, system), w, p, system)
        rhs = p_conj * norm_Lp(g, w, p, system)
        return InequalityCheck.compare("doob-scalar", lhs, rhs, p_conj, tol)

    funcs = [system.as_leaf_values(arr, f"level function {j}") for j, arr in enumerate(g)]
    if len(funcs) != system.depth + 1:
        raise ValueError(f"need one function per level, got {len(funcs)} for depth {system.depth}")
    conditionals = _level_conditionals(system, funcs, w)
    stacked = np.stack(funcs)
    if mode == "linf":
        lhs = norm_Lp(conditionals.max(axis=0), w, p, system)
        rhs = p_conj * norm_Lp(stacked.max(axis=0), w, p, system)
        return InequalityCheck.compare("doob-linf", lhs, rhs, p_conj, tol)
    if mode == "l1":
        lhs = norm_Lp(conditionals.sum(axis=0), w, p, system)
        rhs = p * norm_Lp(stacked.sum(axis=0), w, p, system)
        return InequalityCheck.compare("doob-l1", lhs, rhs, p, tol)
    raise ValueError(f"unknown mode {mode!r}, expected 'scalar', 'linf' or 'l1'")


def verify_carleson(fam, f, sigma, p: float, tol: float = REL_TOL) -> InequalityCheck:
    """Embedding for a family whose residual sets keep half of each cube's mass.

    Preconditions (residuals inside their cubes, pairwise disjoint, and
    sigma(F) <= 2 sigma(E(F))) are enforced first and raise
    FamilyPreconditionError, so a structural defect is never conflated with a
    failure of the embedding inequality itself.
    """
    system = fam.system
    f = system.as_leaf_values(f)
    sigma = system.as_leaf_values(sigma, "weight")

    overlap = np.zeros(system.n_leaves, dtype=np.int64)
    masses = system.cube_integrals(sigma)
    for m in fam.members:
        inside = fam.residual[m]
        if np.any(inside & ~system.leaves_mask(m)):
            raise FamilyPreconditionError(
                f"residual set of {system.cube_of(m)} leaves its cube"
            )
        overlap += inside
        kept = float(np.dot(sigma, inside) * system.leaf_volume)
        if masses[m] > 2.0 * kept * (1.0 + tol):
            raise FamilyPreconditionError(
                f"residual set of {system.cube_of(m)} keeps less than half the mass"
                f" ({kept} of {float(masses[m])})"
            )
    if np.any(overlap > 1):
        raise FamilyPreconditionError("residual sets overlap")

    ids = np.array(fam.members)
    avg = system.weighted_cube_averages(np.abs(f), sigma)
    lhs = float(np.dot(avg[ids] ** p, masses[ids])) ** (1.0 / p)
    p_conj = conjugate_exponent(p)
    constant = 2.0 ** (1.0 / p) * p_conj
    rhs = constant * norm_Lp(f, sigma, p, system)
    return InequalityCheck.compare("carleson-embedding", lhs, rhs, constant, tol)
