"""Stopping-cube (principal cube) families and their derived index sets.

Both constructions start from the root and recurse: the stopping children of
a family member are the maximal strict subcubes on which a local quantity
more than doubles its value on the member.

- density side: the sigma-average of f against the threshold 2 <f>_sigma(F);
- family side: the l^{r'} norm of the coefficients along the ancestor chain
  against twice the omega-average of the pointwise l^{r'} norm on G.

Comparisons are strict floating-point ``>`` with no tolerance, so the family
is a pure function of the inputs.  Cubes with zero parent mass average to
zero, which keeps the recursion well defined for degenerate weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import DyadicSystem
from .inequalities import InequalityCheck, REL_TOL, worst_case_check
from .operators import lr_reduce

__all__ = [
    "DerivedIndexSets",
    "StoppingFamily",
    "build_fG",
    "build_f_stopping",
    "build_gF",
    "build_g_stopping",
    "chain_norms",
    "derive_index_sets",
    "verify_properties_a",
    "verify_properties_b",
]


@dataclass
class StoppingFamily:
    """A nested family of cubes with generations, children and residual sets.

    ``parent_map[c]`` is the smallest family member containing cube c (the
    root always belongs, so the map is total).  ``residual[m]`` is the leaf
    set of member m minus its stopping children; a member with no children
    keeps its whole leaf set.
    """

    system: DyadicSystem
    members: tuple[int, ...]
    generation: dict[int, int]
    children_map: dict[int, tuple[int, ...]]
    residual: dict[int, np.ndarray]
    parent_map: np.ndarray
    member_set: frozenset[int] = field(init=False)

    def __post_init__(self) -> None:
        self.member_set = frozenset(self.members)

    def is_member(self, q) -> bool:
        return self.system.resolve(q) in self.member_set

    def to_dict(self) -> dict:
        return {
            "members": [
                {
                    "cube": self.system.cube_of(m).key(),
                    "generation": self.generation[m],
                    "children": [self.system.cube_of(c).key() for c in self.children_map[m]],
                    "residual_leaves": [int(x) for x in np.flatnonzero(self.residual[m])],
                }
                for m in self.members
            ]
        }


def _maximal_children(system: DyadicSystem, member: int, condition: np.ndarray) -> list[int]:
    """Maximal strict subcubes of ``member`` satisfying a per-cube condition."""
    found: list[int] = []
    stack = list(system.children[member])
    while stack:
        cid = int(stack.pop())
        if condition[cid]:
            found.append(cid)
        else:
            stack.extend(system.children[cid])
    return sorted(found)


def _build_family(
    system: DyadicSystem, condition_for: Callable[[int], np.ndarray]
) -> StoppingFamily:
    root = 0
    members = [root]
    generation = {root: 0}
    children_map: dict[int, tuple[int, ...]] = {}
    queue = [root]
    while queue:
        m = queue.pop(0)
        kids = _maximal_children(system, m, condition_for(m))
        children_map[m] = tuple(kids)
        for kid in kids:
            generation[kid] = generation[m] + 1
            members.append(kid)
            queue.append(kid)
    members.sort()

    residual: dict[int, np.ndarray] = {}
    for m in members:
        mask = system.leaves_mask(m).copy()
        for kid in children_map[m]:
            mask &= ~system.leaves_mask(kid)
        residual[m] = mask

    member_mask = np.zeros(system.n_cubes, dtype=bool)
    member_mask[members] = True
    parent_map = np.full(system.n_cubes, -1, dtype=np.int64)
    for j in range(system.depth, -1, -1):
        anc = system.cube_ancestors[:, j]
        hit = (anc >= 0) & (parent_map < 0) & member_mask[np.clip(anc, 0, None)]
        parent_map[hit] = anc[hit]

    return StoppingFamily(
        system=system,
        members=tuple(members),
        generation=generation,
        children_map=children_map,
        residual=residual,
        parent_map=parent_map,
    )


def build_f_stopping(f, sigma, system: DyadicSystem) -> StoppingFamily:
    """Family for the density side: averages more than double the member's."""
    f = system.as_leaf_values(f)
    sigma = system.as_leaf_values(sigma, "weight")
    avg = system.weighted_cube_averages(f, sigma)
    return _build_family(system, lambda m: avg > 2.0 * avg[m])


def chain_norms(a, r: float, system: DyadicSystem) -> np.ndarray:
    """l^r norm of the coefficients on the ancestors (inclusive) of each cube."""
    a = system.as_cube_values(a)
    out = np.empty(system.n_cubes)
    if math.isinf(r):
        out[0] = a[0]
        for j in range(1, system.depth + 1):
            lo, hi = int(system.level_offsets[j]), int(system.level_offsets[j + 1])
            out[lo:hi] = np.maximum(out[system.parents[lo:hi]], a[lo:hi])
        return out
    powers = a if r == 1.0 else a**r
    out[0] = powers[0]
    for j in range(1, system.depth + 1):
        lo, hi = int(system.level_offsets[j]), int(system.level_offsets[j + 1])
        out[lo:hi] = out[system.parents[lo:hi]] + powers[lo:hi]
    return out if r == 1.0 else out ** (1.0 / r)


def build_g_stopping(a, omega, r_conj: float, system: DyadicSystem) -> StoppingFamily:
    """Family for a piecewise-constant cube family: chain norms double the
    member's omega-average of the pointwise l^{r'} norm."""
    a = system.as_cube_values(a)
    omega = system.as_leaf_values(omega, "weight")
    norms = chain_norms(a, r_conj, system)
    leaf_norms = norms[system.leaf_ids]
    avg_norm = system.weighted_cube_averages(leaf_norms, omega)
    return _build_family(system, lambda m: norms > 2.0 * avg_norm[m])


def _partition_checks(fam: StoppingFamily, prefix: str) -> dict[str, InequalityCheck]:
    system = fam.system
    bad_partition = 0
    for m in fam.members:
        cover = fam.residual[m].astype(np.int64)
        for kid in fam.children_map[m]:
            cover = cover + system.leaves_mask(kid)
        bad_partition += int(np.any(cover != system.leaves_mask(m)))
    overlap = np.zeros(system.n_leaves, dtype=np.int64)
    for m in fam.members:
        overlap += fam.residual[m]
    bad_disjoint = int((overlap > 1).sum())
    return {
        f"{prefix}1-partition": InequalityCheck.exact_count(f"{prefix}1-partition", bad_partition),
        f"{prefix}2-disjoint-residuals": InequalityCheck.exact_count(
            f"{prefix}2-disjoint-residuals", bad_disjoint
        ),
    }


def verify_properties_a(
    fam: StoppingFamily, f, sigma, tol: float = REL_TOL
) -> dict[str, InequalityCheck]:
    """Structural and quantitative checks for a density-side family.

    a1 partition of each member, a2 disjoint residuals, a3 the residual keeps
    at least half the member's sigma-mass, a4 every cube's average is at most
    twice its stopping parent's.
    """
    system = fam.system
    f = system.as_leaf_values(f)
    sigma = system.as_leaf_values(sigma, "weight")
    checks = _partition_checks(fam, "a")

    masses = system.cube_integrals(sigma)
    ids = np.array(fam.members)
    residual_mass = np.array(
        [float(np.dot(sigma, fam.residual[m]) * system.leaf_volume) for m in fam.members]
    )
    checks["a3-residual-mass"] = worst_case_check(
        "a3-residual-mass", 0.5 * masses[ids], residual_mass, constant=0.5, tol=tol
    )

    avg = system.weighted_cube_averages(f, sigma)
    checks["a4-average-control"] = worst_case_check(
        "a4-average-control", avg, 2.0 * avg[fam.parent_map], constant=2.0, tol=tol
    )
    return checks


def verify_properties_b(
    fam: StoppingFamily, a, omega, r_conj: float, tol: float = REL_TOL
) -> dict[str, InequalityCheck]:
    """Checks for a family-side stopping family.

    b1, b2, b3 mirror the density side with omega in place of sigma.  b4
    bounds the chain norm of every cube by twice its stopping parent's
    average pointwise norm; cubes whose parent carries no omega-mass are
    skipped, since they cannot contribute to any omega-integral.  b5 bounds
    the restricted family (the cubes mapped to a given member) in the
    essential-sup sense on that member.
    """
    system = fam.system
    a = system.as_cube_values(a)
    omega = system.as_leaf_values(omega, "weight")
    checks = _partition_checks(fam, "b")

    masses = system.cube_integrals(omega)
    ids = np.array(fam.members)
    residual_mass = np.array(
        [float(np.dot(omega, fam.residual[m]) * system.leaf_volume) for m in fam.members]
    )
    checks["b3-residual-mass"] = worst_case_check(
        "b3-residual-mass", 0.5 * masses[ids], residual_mass, constant=0.5, tol=tol
    )

    norms = chain_norms(a, r_conj, system)
    avg_norm = system.weighted_cube_averages(norms[system.leaf_ids], omega)
    live = masses[fam.parent_map] > 0.0
    checks["b4-chain-control"] = worst_case_check(
        "b4-chain-control",
        np.where(live, norms, 0.0),
        np.where(live, 2.0 * avg_norm[fam.parent_map], 0.0),
        constant=2.0,
        tol=tol,
    )

    # b5: per member, sup over omega-positive leaves of the l^{r'} norm of the
    # coefficients on chain cubes whose stopping parent is that member
    chain_cubes = system.leaf_ancestors
    chain_parents = fam.parent_map[chain_cubes]
    chain_coeffs = a[chain_cubes]
    positive = omega > 0.0
    lhs = np.zeros(len(fam.members))
    rhs = np.zeros(len(fam.members))
    for i, m in enumerate(fam.members):
        rows = system.leaves_mask(m) & positive
        if np.any(rows):
            restricted = np.where(chain_parents[rows] == m, chain_coeffs[rows], 0.0)
            lhs[i] = float(lr_reduce(restricted, r_conj, axis=1).max())
        rhs[i] = 2.0 * avg_norm[m]
    checks["b5-restricted-sup"] = worst_case_check(
        "b5-restricted-sup", lhs, rhs, constant=2.0, tol=tol
    )
    return checks


@dataclass
class DerivedIndexSets:
    """Index sets tying a density-side family to a family-side family.

    ``selected_children_g[G]`` keeps the stopping children of G that sit
    inside some density-side member contained in G; symmetrically for
    ``selected_children_f``.  ``index_sets[F]`` holds the cubes whose
    density-side parent is F and whose family-side parent lies inside F.
    """

    system: DyadicSystem
    selected_children_g: dict[int, tuple[int, ...]]
    selected_children_f: dict[int, tuple[int, ...]]
    index_sets: dict[int, np.ndarray]

    def pair_index_set(self, f_member, f_child) -> np.ndarray:
        """Cubes of ``index_sets[F]`` strictly containing the given child."""
        fid = self.system.resolve(f_member)
        cid = self.system.resolve(f_child)
        qs = self.index_sets[fid]
        keep = [q for q in qs if q != cid and self.system.contains(int(q), cid)]
        return np.array(sorted(keep), dtype=np.int64)


def _contains_vector(system: DyadicSystem, outer: int, inner_ids: np.ndarray) -> np.ndarray:
    lvl = system.levels[outer]
    return (system.levels[inner_ids] >= lvl) & (system.cube_ancestors[inner_ids, lvl] == outer)


def derive_index_sets(
    fam_f: StoppingFamily, fam_g: StoppingFamily, system: DyadicSystem
) -> DerivedIndexSets:
    selected_g: dict[int, tuple[int, ...]] = {}
    for g in fam_g.members:
        kids = fam_g.children_map[g]
        keep = [k for k in kids if system.contains(g, int(fam_f.parent_map[k]))]
        selected_g[g] = tuple(keep)

    selected_f: dict[int, tuple[int, ...]] = {}
    for fm in fam_f.members:
        kids = fam_f.children_map[fm]
        keep = [k for k in kids if system.contains(fm, int(fam_g.parent_map[k]))]
        selected_f[fm] = tuple(keep)

    index_sets: dict[int, np.ndarray] = {}
    all_ids = np.arange(system.n_cubes)
    for fm in fam_f.members:
        own = fam_f.parent_map == fm
        inside = _contains_vector(system, fm, fam_g.parent_map)
        index_sets[fm] = all_ids[own & inside]

    return DerivedIndexSets(system, selected_g, selected_f, index_sets)


def build_fG(
    f,
    sigma,
    fam_f: StoppingFamily,
    fam_g: StoppingFamily,
    g_member,
    derived: DerivedIndexSets | None = None,
) -> np.ndarray:
    """Replacement density for one family-side member G.

    Keeps f on the residual set of G and freezes it to its sigma-average on
    each selected stopping child.  For every cube Q with family-side parent G
    whose density-side parent lies inside G, the sigma-integral over Q of the
    replacement matches that of f.
    """
    system = fam_f.system
    f = system.as_leaf_values(f)
    sigma = system.as_leaf_values(sigma, "weight")
    gid = system.resolve(g_member)
    if gid not in fam_g.member_set:
        raise KeyError(f"cube {system.cube_of(gid)} is not a family member")
    if derived is None:
        derived = derive_index_sets(fam_f, fam_g, system)
    avg = system.weighted_cube_averages(f, sigma)
    out = f * fam_g.residual[gid]
    for kid in derived.selected_children_g[gid]:
        out = np.where(system.leaves_mask(kid), avg[kid], out)
    return out


def build_gF(
    a,
    fam_f: StoppingFamily,
    fam_g: StoppingFamily,
    f_member,
    derived: DerivedIndexSets | None = None,
) -> np.ndarray:
    """Restriction of cube coefficients to the index set of one member F."""
    system = fam_f.system
    a = system.as_cube_values(a)
    fid = system.resolve(f_member)
    if fid not in fam_f.member_set:
        raise KeyError(f"cube {system.cube_of(fid)} is not a family member")
    if derived is None:
        derived = derive_index_sets(fam_f, fam_g, system)
    out = np.zeros(system.n_cubes)
    qs = derived.index_sets[fid]
    out[qs] = a[qs]
    return out
