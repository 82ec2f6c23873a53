"""Testing constants, operator-norm estimates and the characterization check.

For an instance (dyadic system, coefficients lam, weights sigma and omega,
exponents p and r) this module computes:

- the direct testing constant: the largest ratio of the L^p(l^r)(omega) norm
  of the localized forward operator applied to sigma against sigma(R)^(1/p);
- a bracket for the dual testing constant: the lower end scans feasible
  piecewise-constant families in the unit ball of L^inf(l^{r'})(omega) (and
  refines by projected ascent), the upper end is the computable surrogate
  that swaps the roles of the weights;
- a lower bound for the norm of the full operator (indicator candidates,
  seeded random starts, projected-ascent refinement), plus the exact value
  through a generalized eigenvalue problem when p = r = 2;
- the quantitative characterization: the norm is controlled by the sum of
  the two testing constants times 20 p p' and the averaging constant.

proof_trace decomposes the dual pairing along the two stopping families and
checks every inequality the control argument walks through.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import DyadicSystem, Exponents
from .inequalities import REL_TOL, InequalityCheck, stein_constant
from .operators import dual_pairing, lr_reduce, norm_Lp, norm_Lp_lr
from .optimize import power_iteration, projected_gradient_ascent
from .stopping import build_f_stopping, build_fG, build_g_stopping, build_gF, derive_index_sets

__all__ = [
    "Budget",
    "ConstantsBundle",
    "Instance",
    "ProofTrace",
    "VerificationReport",
    "direct_testing_constant",
    "dual_testing_constant",
    "operator_norm_estimate",
    "proof_trace",
    "theorem_verify",
]


@dataclass(frozen=True)
class Budget:
    """Optimizer effort: number of ascent restarts and iterations per run."""

    restarts: int = 16
    iterations: int = 200

    def __post_init__(self) -> None:
        if self.restarts < 0 or self.iterations < 0:
            raise ValueError("budget fields must be nonnegative")


@dataclass
class Instance:
    """One fully specified problem: geometry, coefficients, weights, exponents."""

    system: DyadicSystem
    lam: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    exponents: Exponents

    def __post_init__(self) -> None:
        self.lam = self.system.as_cube_values(self.lam, "lambda coefficients")
        self.sigma = self.system.as_leaf_values(self.sigma, "sigma")
        self.omega = self.system.as_leaf_values(self.omega, "omega")

    def summary(self) -> dict:
        e = self.exponents
        return {
            "dimension": self.system.dimension,
            "depth": self.system.depth,
            "p": e.p,
            "r": None if math.isinf(e.r) else e.r,
        }

    def scaled_lam(self, factor: float) -> "Instance":
        return replace(self, lam=self.lam * factor)


@dataclass
class ConstantsBundle:
    """The constants of one instance, with the witnesses that realize them."""

    direct: float
    dual_lower: float
    dual_upper: float
    norm_lower: float
    norm_exact: float | None
    direct_witness: int | None
    dual_witness: tuple[int, np.ndarray] | None
    dual_upper_witness: int | None
    norm_witness: np.ndarray | None
    eigen_converged: bool | None = None


def _localized_ratios(system: DyadicSystem, coeffs, out_weight, in_masses, p: float, r: float):
    """Ratios of the localized output norm to the input mass, for every cube.

    Yields (cube id, ratio) over cubes with positive input mass.  The chain of
    a leaf below the top cube R is the slice of its full ancestor chain from
    the level of R down, so no re-aggregation is needed per cube.
    """
    chain = system.chain_values(coeffs)
    out_contrib = out_weight * system.leaf_volume
    for rid in range(system.n_cubes):
        mass = in_masses[rid]
        if mass <= 0.0:
            continue
        rows = system.leaves_mask(rid)
        local = chain[rows][:, system.levels[rid] :]
        pointwise = lr_reduce(local, r, axis=1)
        norm = float(np.dot(pointwise**p, out_contrib[rows])) ** (1.0 / p)
        yield rid, norm / mass ** (1.0 / p)


def direct_testing_constant(inst: Instance) -> tuple[float, int | None]:
    """Largest localized-output ratio over cubes with positive sigma-mass."""
    system = inst.system
    e = inst.exponents
    coeffs = inst.lam * system.cube_averages(inst.sigma)
    masses = system.cube_integrals(inst.sigma)
    best, witness = 0.0, None
    for rid, ratio in _localized_ratios(system, coeffs, inst.omega, masses, e.p, e.r):
        if ratio > best:
            best, witness = ratio, rid
    return best, witness


def _dual_upper(inst: Instance) -> tuple[float, int | None]:
    """Surrogate dual constant: the direct scan with the weights swapped."""
    system = inst.system
    e = inst.exponents
    coeffs = inst.lam * system.cube_averages(inst.omega)
    masses = system.cube_integrals(inst.omega)
    best, witness = 0.0, None
    for rid, ratio in _localized_ratios(system, coeffs, inst.sigma, masses, e.p_conj, e.r):
        if ratio > best:
            best, witness = ratio, rid
    return best, witness


def _dual_value_fn(inst: Instance, rid: int):
    """Batch objective in the family coefficients, for a fixed top cube."""
    system = inst.system
    e = inst.exponents
    base = inst.lam * (system.cube_integrals(inst.omega) / system.volumes)
    rows = system.leaves_mask(rid)
    local_chain = system.leaf_ancestors[rows][:, system.levels[rid] :]
    sigma_contrib = (inst.sigma * system.leaf_volume)[rows]
    denom = float(system.cube_integrals(inst.omega)[rid]) ** (1.0 / e.p_conj)

    def value(batch: np.ndarray) -> np.ndarray:
        contrib = batch * base[None, :]
        summed = contrib[:, local_chain].sum(axis=2)
        return (summed**e.p_conj @ sigma_contrib) ** (1.0 / e.p_conj) / denom

    return value


def _dual_projection(inst: Instance, rid: int):
    """Clamp, localize below the top cube, then rescale chains into the unit
    ball of the pointwise l^{r'} norm over omega-positive leaves."""
    system = inst.system
    r_conj = inst.exponents.r_conj
    inside = system.descendants_mask(rid)
    carries_omega = system.cube_integrals(inst.omega) > 0.0
    keep = inside & carries_omega
    positive = np.flatnonzero(inst.omega > 0)
    chains = system.leaf_ancestors[positive]

    def project(a: np.ndarray) -> np.ndarray:
        a = np.where(keep, np.maximum(a, 0.0), 0.0)
        if positive.size == 0:
            return a
        norms = lr_reduce(a[chains], r_conj, axis=1)
        scale = np.ones(system.n_cubes)
        for j in range(system.depth + 1):
            np.maximum.at(scale, chains[:, j], norms)
        return a / np.maximum(scale, 1.0)

    return project


def dual_testing_constant(
    inst: Instance, budget: Budget = Budget(), seed: int = 0
) -> tuple[float, float, ConstantsBundle | None]:
    """Bracket (lower, upper) for the dual testing constant.

    The lower end evaluates explicit candidates: every single-cube family,
    and on every top cube the constant family scaled to unit pointwise norm
    (for r' = inf the constant family with value one, which is optimal by
    monotonicity).  The best candidate is refined by projected ascent.
    Returns (lower, upper, witness) with the witness as (top cube id,
    coefficients).
    """
    system = inst.system
    e = inst.exponents
    upper, _ = _dual_upper(inst)

    omega_masses = system.cube_integrals(inst.omega)
    sigma_masses = system.cube_integrals(inst.sigma)
    avg_omega = omega_masses / system.volumes

    best = 0.0
    best_rid: int | None = None
    best_coeffs: np.ndarray | None = None

    # single-cube candidates, tightest when the top cube is the cube itself
    live = omega_masses > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        singles = np.where(
            live,
            inst.lam * avg_omega * (sigma_masses / np.where(live, omega_masses, 1.0))
            ** (1.0 / e.p_conj),
            0.0,
        )
    if np.any(singles > 0):
        qid = int(np.argmax(singles))
        best = float(singles[qid])
        best_rid = qid
        coeffs = np.zeros(system.n_cubes)
        coeffs[qid] = 1.0
        best_coeffs = coeffs

    # constant family scaled into the unit ball, on every top cube
    level_count = system.depth + 1
    scale = 1.0 if math.isinf(e.r_conj) else level_count ** (-1.0 / e.r_conj)
    chain = system.chain_values(inst.lam * avg_omega)
    sigma_contrib = inst.sigma * system.leaf_volume
    for rid in range(system.n_cubes):
        if omega_masses[rid] <= 0.0:
            continue
        rows = system.leaves_mask(rid)
        summed = chain[rows][:, system.levels[rid] :].sum(axis=1)
        norm = float(np.dot(summed**e.p_conj, sigma_contrib[rows])) ** (1.0 / e.p_conj)
        ratio = scale * norm / float(omega_masses[rid]) ** (1.0 / e.p_conj)
        if ratio > best:
            best = ratio
            best_rid = rid
            best_coeffs = scale * np.where(system.descendants_mask(rid), 1.0, 0.0)

    if best_rid is not None and budget.restarts > 0 and budget.iterations > 0:
        value_fn = _dual_value_fn(inst, best_rid)
        project = _dual_projection(inst, best_rid)
        starts = [best_coeffs]
        for k in range(budget.restarts - 1):
            rng = np.random.default_rng([seed, 23, k])
            starts.append(rng.lognormal(0.0, 1.0, system.n_cubes))
        for start in starts:
            point, value, _ = projected_gradient_ascent(
                value_fn, start, project, max_iter=budget.iterations
            )
            if value > best:
                best = value
                best_coeffs = point
    witness = None if best_rid is None else (best_rid, best_coeffs)
    return best, upper, witness


def _primal_value_fn(inst: Instance):
    """Batch objective: output norm over input norm for leaf densities."""
    system = inst.system
    e = inst.exponents
    averaging = system.leaf_member * (inst.sigma * system.leaf_volume)[None, :]
    averaging = averaging / system.volumes[:, None]
    anc = system.leaf_ancestors
    omega_contrib = inst.omega * system.leaf_volume
    sigma_contrib = inst.sigma * system.leaf_volume
    lam = inst.lam

    def value(batch: np.ndarray) -> np.ndarray:
        coeffs = (batch @ averaging.T) * lam[None, :]
        pointwise = lr_reduce(coeffs[:, anc], e.r, axis=2)
        num = (pointwise**e.p @ omega_contrib) ** (1.0 / e.p)
        den = (batch**e.p @ sigma_contrib) ** (1.0 / e.p)
        good = den > 0.0
        return np.where(good, num / np.where(good, den, 1.0), 0.0)

    return value


def _primal_projection(inst: Instance):
    """Clamp to nonnegative densities supported on sigma and normalize."""
    system = inst.system
    e = inst.exponents
    supported = inst.sigma > 0.0
    sigma_contrib = inst.sigma * system.leaf_volume

    def project(f: np.ndarray) -> np.ndarray:
        f = np.where(supported, np.maximum(f, 0.0), 0.0)
        norm = float(np.dot(f**e.p, sigma_contrib)) ** (1.0 / e.p)
        return f / norm if norm > 0 else f

    return project


def _exact_norm_quadratic(inst: Instance) -> tuple[float, np.ndarray, bool]:
    """Exact operator norm for p = r = 2 via the largest generalized eigenvalue.

    The squared output norm is a quadratic form in the density restricted to
    the sigma-positive leaves; against the diagonal input form this is a
    symmetric eigenvalue problem, solved by power iteration to relative
    residual 1e-10.
    """
    system = inst.system
    support = np.flatnonzero(inst.sigma > 0)
    f = np.zeros(system.n_leaves)
    if support.size == 0:
        return 0.0, f, True
    weights = (inst.sigma * system.leaf_volume)[support]
    averaging = system.leaf_member[:, support] * weights[None, :] / system.volumes[:, None]
    diag = inst.lam**2 * system.cube_integrals(inst.omega)
    quad = averaging.T @ (diag[:, None] * averaging)
    half = 1.0 / np.sqrt(weights)
    sym = quad * half[:, None] * half[None, :]
    mu, vec, converged = power_iteration(sym, tol=1e-10)
    f[support] = np.maximum(vec, 0.0) * half
    return math.sqrt(max(mu, 0.0)), f, converged


def operator_norm_estimate(
    inst: Instance, budget: Budget = Budget(), seed: int = 0
) -> tuple[float, float | None, np.ndarray | None, bool | None]:
    """Lower bound for the operator norm, and the exact value when p = r = 2.

    Candidates: the indicator of every cube with positive sigma-mass, seeded
    random densities, and projected-ascent refinements started from the best
    indicator and from each random density.  Returns (lower, exact or None,
    witness density, eigen convergence flag or None).
    """
    system = inst.system
    e = inst.exponents
    value_fn = _primal_value_fn(inst)
    project = _primal_projection(inst)

    sigma_masses = system.cube_integrals(inst.sigma)
    candidates = [rid for rid in range(system.n_cubes) if sigma_masses[rid] > 0]
    best, best_f = 0.0, None
    if candidates:
        batch = np.stack([system.leaves_mask(rid).astype(float) for rid in candidates])
        values = value_fn(batch)
        pick = int(np.argmax(values))
        best = float(values[pick])
        best_f = batch[pick]

    starts: list[np.ndarray] = []
    if best_f is not None:
        starts.append(best_f)
    for k in range(max(0, budget.restarts - 1)):
        rng = np.random.default_rng([seed, 11, k])
        starts.append(rng.lognormal(0.0, 1.0, system.n_leaves))
    if budget.iterations > 0:
        for start in starts:
            point, value, _ = projected_gradient_ascent(
                value_fn, start, project, max_iter=budget.iterations
            )
            if value > best:
                best, best_f = value, point

    exact: float | None = None
    converged: bool | None = None
    if e.p == 2.0 and e.r == 2.0:
        exact, eigen_f, converged = _exact_norm_quadratic(inst)
    if best_f is not None:
        best_f = project(best_f)
    return best, exact, best_f, converged


@dataclass
class VerificationReport:
    """Constants, the characterization bound and the checks for one instance."""

    instance: Instance
    constants: ConstantsBundle
    bound: float
    bound_factor: float
    checks: list[InequalityCheck]
    informational: list[InequalityCheck]
    budget: Budget
    tol: float
    seed: int
    wall_clock: float = 0.0

    @property
    def all_hold(self) -> bool:
        return all(check.holds for check in self.checks)


def theorem_verify(
    inst: Instance, budget: Budget = Budget(), tol: float = REL_TOL, seed: int = 0
) -> VerificationReport:
    """Compute all constants and verify both directions of the characterization.

    Binding checks: the direct constant never exceeds the norm lower bound
    (necessity via indicator candidates), the dual bracket is ordered, and
    every norm value stays below the quantitative bound built from the
    testing constants (sufficiency).  When the exact norm is available the
    dual lower bound must also sit below it.
    """
    start = time.perf_counter()
    direct, direct_witness = direct_testing_constant(inst)
    dual_lower, dual_upper, dual_witness = dual_testing_constant(inst, budget, seed)
    _, upper_witness = _dual_upper(inst)
    norm_lower, norm_exact, norm_witness, eigen_converged = operator_norm_estimate(
        inst, budget, seed
    )

    e = inst.exponents
    factor = stein_constant(e.p_conj, e.r_conj) * 20.0 * e.p * e.p_conj
    bound = factor * (direct + dual_upper)

    checks = [
        InequalityCheck.compare("necessity-direct", direct, norm_lower, 1.0, tol),
        InequalityCheck.compare("dual-bracket", dual_lower, dual_upper, 1.0, tol),
        InequalityCheck.compare("sufficiency-lower", norm_lower, bound, factor, tol),
    ]
    informational = []
    if norm_exact is not None:
        checks.append(InequalityCheck.compare("sufficiency-exact", norm_exact, bound, factor, tol))
        checks.append(InequalityCheck.compare("necessity-dual", dual_lower, norm_exact, 1.0, tol))
        checks.append(InequalityCheck.compare("lower-vs-exact", norm_lower, norm_exact, 1.0, tol))
    else:
        informational.append(
            InequalityCheck.compare("necessity-dual-vs-lower", dual_lower, norm_lower, 1.0, tol)
        )

    constants = ConstantsBundle(
        direct=direct,
        dual_lower=dual_lower,
        dual_upper=dual_upper,
        norm_lower=norm_lower,
        norm_exact=norm_exact,
        direct_witness=direct_witness,
        dual_witness=dual_witness,
        dual_upper_witness=upper_witness,
        norm_witness=norm_witness,
        eigen_converged=eigen_converged,
    )
    return VerificationReport(
        instance=inst,
        constants=constants,
        bound=bound,
        bound_factor=factor,
        checks=checks,
        informational=informational,
        budget=budget,
        tol=tol,
        seed=seed,
        wall_clock=time.perf_counter() - start,
    )


@dataclass
class ProofTrace:
    """Decomposition of the dual pairing along the two stopping families.

    The pairing splits into the terms whose density-side stopping parent lies
    inside the family-side parent (controlled by dual testing) and the
    opposite inclusion (controlled by direct testing); cubes with equal
    parents appear in both raw sums and are assigned to the dual side in the
    exclusive split.
    """

    fam_f: object
    fam_g: object
    pairing: float
    dual_side_sum: float
    direct_side_sum: float
    direct_side_exclusive: float
    tie_sum: float
    replacement_norm: float
    restriction_norm: float
    f_norm: float
    g_norm: float
    direct_constant: float
    dual_upper_constant: float
    checks: list[InequalityCheck] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(check.holds for check in self.checks)


def proof_trace(inst: Instance, f, a, tol: float = REL_TOL) -> ProofTrace:
    """Run the full control argument on one (instance, density, family) triple."""
    system = inst.system
    e = inst.exponents
    f = system.as_leaf_values(f)
    a = system.as_cube_values(a)

    fam_f = build_f_stopping(f, inst.sigma, system)
    fam_g = build_g_stopping(a, inst.omega, e.r_conj, system)
    pf = fam_f.parent_map
    pg = fam_g.parent_map

    terms = inst.lam * system.cube_averages(f * inst.sigma) * a * system.cube_integrals(inst.omega)
    f_inside_g = system.cube_ancestors[pf, system.levels[pg]] == pg
    g_inside_f = system.cube_ancestors[pg, system.levels[pf]] == pf
    ties = f_inside_g & g_inside_f
    dual_side = float(terms[f_inside_g].sum())
    direct_side = float(terms[g_inside_f].sum())
    direct_exclusive = float(terms[g_inside_f & ~f_inside_g].sum())
    tie_sum = float(terms[ties].sum())
    uncovered = int(np.count_nonzero(~(f_inside_g | g_inside_f)))

    pairing = dual_pairing(f, a, inst.sigma, inst.omega, inst.lam, system)

    derived = derive_index_sets(fam_f, fam_g, system)
    replacement_p = 0.0
    for g_member in fam_g.members:
        part = build_fG(f, inst.sigma, fam_f, fam_g, g_member, derived)
        replacement_p += norm_Lp(part, inst.sigma, e.p, system) ** e.p
    replacement_norm = replacement_p ** (1.0 / e.p)

    restriction_p = 0.0
    for f_member in fam_f.members:
        part = build_gF(a, fam_f, fam_g, f_member, derived)
        restriction_p += norm_Lp_lr(part, inst.omega, e.p_conj, e.r_conj, system) ** e.p_conj
    restriction_norm = restriction_p ** (1.0 / e.p_conj)

    f_norm = norm_Lp(f, inst.sigma, e.p, system)
    g_norm = norm_Lp_lr(a, inst.omega, e.p_conj, e.r_conj, system)
    direct, _ = direct_testing_constant(inst)
    dual_upper, _ = _dual_upper(inst)
    control = 20.0 * e.p * e.p_conj

    checks = [
        InequalityCheck.compare(
            "pairing-splits", pairing, dual_side + direct_exclusive, 1.0, tol
        ),
        InequalityCheck.compare(
            "replacement-norms", replacement_norm, 5.0 * e.p_conj * f_norm, 5.0 * e.p_conj, tol
        ),
        InequalityCheck.compare(
            "restriction-norms", restriction_norm, 5.0 * e.p * g_norm, 5.0 * e.p, tol
        ),
        InequalityCheck.compare(
            "dual-side-control", dual_side, control * dual_upper * f_norm * g_norm, control, tol
        ),
        InequalityCheck.compare(
            "direct-side-control", direct_side, control * direct * f_norm * g_norm, control, tol
        ),
        InequalityCheck.exact_count("split-exhaustive", uncovered),
    ]
    return ProofTrace(
        fam_f=fam_f,
        fam_g=fam_g,
        pairing=pairing,
        dual_side_sum=dual_side,
        direct_side_sum=direct_side,
        direct_side_exclusive=direct_exclusive,
        tie_sum=tie_sum,
        replacement_norm=replacement_norm,
        restriction_norm=restriction_norm,
        f_norm=f_norm,
        g_norm=g_norm,
        direct_constant=direct,
        dual_upper_constant=dual_upper,
        checks=checks,
    )
