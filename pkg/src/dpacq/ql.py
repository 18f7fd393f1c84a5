"""Solver for the quasi-linear model.

At fixed eta the optimum splits into a pooled prefix (common weight W) and a
capped suffix whose participation constraints are tight with a common
product K = c_i * w_i; the weight-sum constraint ties W to K, so each pool
size t reduces to one scalar equation in K.  For affine benefit that
equation is a quadratic solved in closed form; otherwise a sign-scan plus
bisection finds the (at most two) roots.  The best eta comes from a grid
sweep with local refinement, since the fixed-eta optimum has no known
closed form in eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .benefit import LinearBenefit
from .errors import InfeasibleError, InternalConsistencyError, ValidationError
from .model import (FixedEtaSolution, GridSearch, Instance, MechanismSolution,
                    QuasiLinear)
from .oracles import oracle_fixed_eta_ql

FEAS_TOL = 1e-10
K_SCAN_POINTS = 512

# For populations beyond this size the oracle cross-check is sampled rather
# than run on every call.
CROSS_CHECK_FULL_N = 32
CROSS_CHECK_SAMPLE_EVERY = 16
_cross_check_counter = 0


@dataclass(frozen=True)
class QlCandidate:
    """One structured candidate: pooled weight W on the first t agents,
    tight-constraint weights K/c_i on the rest."""

    t: int
    K: float
    W: float
    weights: np.ndarray
    feasible: bool
    objective: float


def _require_ql(instance: Instance) -> QuasiLinear:
    if not isinstance(instance.model, QuasiLinear):
        raise ValidationError("this solver needs a quasi-linear instance")
    return instance.model


def _suffix_sums(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # inv_sum[t] = sum_{i>t} 1/c_i, inv2_sum[t] = sum_{i>t} 1/c_i^2, t = 0..n
    with np.errstate(divide="ignore"):
        inv = np.where(c > 0, 1.0 / c, np.inf)
    n = c.size
    inv_sum = np.zeros(n + 1)
    inv_sum[:n] = np.cumsum(inv[::-1])[::-1]
    inv2_sum = np.zeros(n + 1)
    inv2_sum[:n] = np.cumsum((inv ** 2)[::-1])[::-1]
    return inv_sum, inv2_sum


def solve_K_linear_f(instance: Instance, eta: float, t: int) -> list[float]:
    """Nonnegative real roots of the tight-constraint equation for affine f.

    Substituting f(v) = a - b*v into K*eta = f(V(K)) - o gives a quadratic in
    K whose coefficients are assembled from (a, b, o, eta, sigma2, t) and the
    suffix sums of 1/c_i and 1/c_i^2.  Returns 0, 1 or 2 roots; a negative
    discriminant returns the empty list.
    """
    model = _require_ql(instance)
    f = model.benefit
    if not isinstance(f, LinearBenefit):
        raise ValidationError("solve_K_linear_f needs a linear benefit")
    n = instance.n
    if not 0 <= t <= n:
        raise ValidationError(f"pool size t={t} out of range [0, {n}]")
    a, b, o = f.a, f.b, model.outside_option
    sigma2 = instance.sigma2
    inv_sum, inv2_sum = _suffix_sums(instance.costs())
    p, q = float(inv_sum[t]), float(inv2_sum[t])
    noise = 2.0 / (eta * eta)
    if t == 0:
        qa = b * sigma2 * q
        qb = eta
        qc = b * noise + o - a
    else:
        qa = b * sigma2 * (p * p / t + q)
        qb = eta - 2.0 * b * sigma2 * p / t
        qc = b * sigma2 / t + b * noise + o - a
    if not all(map(np.isfinite, (qa, qb, qc))):
        return []
    if abs(qa) < 1e-300:
        if qb == 0.0:
            return []
        root = -qc / qb
        return [root] if root >= -1e-12 else []
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    if qb >= 0:
        u = -0.5 * (qb + sq)
    else:
        u = -0.5 * (qb - sq)
    roots = []
    if u != 0.0:
        roots.append(qc / u)
    if qa != 0.0:
        roots.append(u / qa)
    out = sorted({max(r, 0.0) for r in roots if np.isfinite(r) and r >= -1e-12})
    return out


def _tight_residual(k: float, t: int, eta: float, sigma2: float, p: float,
                    q: float, f, o: float) -> float:
    # K*eta - f(V(K)) + o; convex in K for concave nonincreasing f
    if t == 0:
        v = sigma2 * k * k * q + 2.0 / (eta * eta)
    else:
        w = (1.0 - k * p) / t
        v = sigma2 * (t * w * w + k * k * q) + 2.0 / (eta * eta)
    return k * eta - f.value(v) + o


def solve_K_bisection(instance: Instance, eta: float, t: int,
                      scan_points: int = K_SCAN_POINTS) -> list[float]:
    """Roots of the tight-constraint equation by sign-scan plus bisection.

    Scans K in [0, c_n] (weights cannot exceed 1, so K <= c_n); the residual
    is convex in K, so at most two sign changes exist and the scan cannot
    miss a bracketed root.  Used for non-affine benefits and as the
    agreement check against the quadratic path.
    """
    model = _require_ql(instance)
    f = model.benefit
    o = model.outside_option
    n = instance.n
    if not 0 <= t <= n:
        raise ValidationError(f"pool size t={t} out of range [0, {n}]")
    sigma2 = instance.sigma2
    c = instance.costs()
    inv_sum, inv2_sum = _suffix_sums(c)
    p, q = float(inv_sum[t]), float(inv2_sum[t])
    if not (np.isfinite(p) and np.isfinite(q)):
        return []  # a zero-cost agent can never sit on a tight constraint
    k_max = float(c[-1])
    if k_max <= 0:
        return []
    ks = np.linspace(0.0, k_max, scan_points)
    res = np.array([_tight_residual(k, t, eta, sigma2, p, q, f, o) for k in ks])
    roots: list[float] = []
    for j in range(scan_points - 1):
        r0, r1 = res[j], res[j + 1]
        if r0 == 0.0:
            roots.append(float(ks[j]))
            continue
        if r0 * r1 < 0:
            a_, b_ = float(ks[j]), float(ks[j + 1])
            fa = r0
            for _ in range(80):
                m = 0.5 * (a_ + b_)
                fm = _tight_residual(m, t, eta, sigma2, p, q, f, o)
                if fm == 0.0:
                    a_ = b_ = m
                    break
                if fa * fm < 0:
                    b_ = m
                else:
                    a_, fa = m, fm
            roots.append(0.5 * (a_ + b_))
    if res[-1] == 0.0:
        roots.append(float(ks[-1]))
    dedup: list[float] = []
    for r in roots:
        if not any(abs(r - d) <= 1e-12 * max(1.0, k_max) for d in dedup):
            dedup.append(max(r, 0.0))
    return dedup


def _candidate_for(instance: Instance, eta: float, t: int, k: float,
                   f, o: float, inv_sum, inv2_sum) -> QlCandidate:
    c = instance.costs()
    sigma2 = instance.sigma2
    n = instance.n
    noise = 2.0 / (eta * eta)
    p, q = float(inv_sum[t]), float(inv2_sum[t])
    if t == 0:
        w_pool = 0.0
        v = sigma2 * k * k * q + noise
    else:
        w_pool = (1.0 - k * p) / t
        v = sigma2 * (t * w_pool * w_pool + k * k * q) + noise
    weights = np.empty(n)
    weights[:t] = w_pool
    with np.errstate(divide="ignore"):
        weights[t:] = np.where(c[t:] > 0, k / c[t:], np.inf)

    margin = f.value(v) - o
    feasible = bool(np.all(np.isfinite(weights)))
    if feasible and w_pool < -FEAS_TOL:
        feasible = False
    if feasible and 0 < t < n and weights[t] > weights[t - 1] + FEAS_TOL:
        feasible = False  # pooled/capped boundary must keep weights nonincreasing
    if feasible:
        # participation for every agent; capped agents hold with equality up
        # to the root-finder's residual
        lhs = c * weights * eta
        if float(np.max(lhs)) > margin + FEAS_TOL:
            feasible = False
    return QlCandidate(t=t, K=float(k), W=float(w_pool), weights=weights,
                       feasible=feasible, objective=float(v))


def ql_candidates(instance: Instance, eta: float) -> list[QlCandidate]:
    """All structured candidates for one eta, feasible or not."""
    model = _require_ql(instance)
    f = model.benefit
    o = model.outside_option
    c = instance.costs()
    sigma2 = instance.sigma2
    n = instance.n
    noise = 2.0 / (eta * eta)
    inv_sum, inv2_sum = _suffix_sums(c)
    linear = isinstance(f, LinearBenefit)
    out: list[QlCandidate] = []

    # all pooled: uniform weights, no tight constraint
    v_n = sigma2 / n + noise
    margin_n = f.value(v_n) - o
    k_virtual = margin_n / eta
    feas_n = float(np.max(c)) * eta / n <= margin_n + FEAS_TOL
    out.append(QlCandidate(t=n, K=float(k_virtual), W=1.0 / n,
                           weights=np.full(n, 1.0 / n), feasible=bool(feas_n),
                           objective=float(v_n)))

    # all capped: the weight-sum constraint pins K directly
    if np.all(c > 0):
        k0 = 1.0 / float(inv_sum[0])
        out.append(_candidate_for(instance, eta, 0, k0, f, o, inv_sum, inv2_sum))

    zeros = int(np.sum(c == 0))
    for t in range(max(1, zeros), n):
        if linear:
            roots = solve_K_linear_f(instance, eta, t)
        else:
            roots = solve_K_bisection(instance, eta, t)
        for k in roots:
            out.append(_candidate_for(instance, eta, t, k, f, o, inv_sum, inv2_sum))
    return out


def _should_cross_check(n: int, flag: Optional[bool]) -> bool:
    global _cross_check_counter
    if flag is not None:
        return flag
    if n <= CROSS_CHECK_FULL_N:
        return True
    _cross_check_counter += 1
    return _cross_check_counter % CROSS_CHECK_SAMPLE_EVERY == 0


def solve_fixed_eta_ql(instance: Instance, eta: float,
                       cross_check: Optional[bool] = None) -> FixedEtaSolution:
    """Optimum of the fixed-eta quasi-linear program.

    Enumerates pool sizes, solves the scalar tight-constraint equation per
    pool size, discards candidates violating any constraint beyond 1e-10,
    and returns the best survivor.  By default the result is cross-checked
    against the independent penalty oracle (always for n <= 32, sampled
    above); a disagreement beyond 1e-5 raises InternalConsistencyError
    rather than returning silently.
    """
    _require_ql(instance)
    if not (np.isfinite(eta) and eta > 0):
        raise ValidationError(f"eta must be positive and finite, got {eta}")
    cands = ql_candidates(instance, eta)
    feas = [cand for cand in cands if cand.feasible]
    if not feas:
        oracle = oracle_fixed_eta_ql(instance, eta)
        if oracle.feasible:
            raise InternalConsistencyError(
                f"structured search found no candidate at eta={eta} but the "
                f"oracle found a feasible point (objective {oracle.objective})")
        raise InfeasibleError(
            f"fixed-eta quasi-linear program is infeasible at eta={eta}",
            eta=float(eta))
    best = min(feas, key=lambda cand: (cand.objective, -cand.t, cand.K))

    gap = None
    if _should_cross_check(instance.n, cross_check):
        oracle = oracle_fixed_eta_ql(instance, eta)
        if not oracle.feasible:
            raise InternalConsistencyError(
                f"oracle reports infeasible at eta={eta} but the structured "
                f"search found a candidate (objective {best.objective})")
        gap = abs(best.objective - oracle.objective)
        if gap > 1e-5:
            raise InternalConsistencyError(
                f"structured objective {best.objective} and oracle objective "
                f"{oracle.objective} disagree by {gap} at eta={eta} "
                f"({sum(c.feasible for c in cands)} feasible candidates)")

    scale = None if best.t == instance.n else best.K
    return FixedEtaSolution(eta=float(eta), weights=best.weights,
                            pool_size=best.t, pooled_weight=best.W,
                            scale=scale, objective=best.objective,
                            oracle_gap=gap)


@dataclass(frozen=True)
class SweepGrid:
    """eta-grid for :func:`sweep_eta_ql`."""

    lo: float
    hi: float
    points: int = 64
    refine_rounds: int = 3

    def __post_init__(self):
        if not (0 < self.lo < self.hi):
            raise ValidationError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")
        if self.points < 2:
            raise ValidationError(f"need at least 2 grid points, got {self.points}")
        if self.refine_rounds < 0:
            raise ValidationError("refine_rounds must be >= 0")


def default_sweep_grid(instance: Instance) -> SweepGrid:
    """Default bracket: the tight-constraint scale offers no natural upper
    bound, so this is configuration, not doctrine; override via the CLI."""
    c = instance.costs()
    positive = c[c > 0]
    hi = 100.0 / float(positive.min()) if positive.size else 100.0
    return SweepGrid(lo=1e-3, hi=hi, points=64, refine_rounds=3)


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def sweep_eta_ql(instance: Instance, grid: SweepGrid,
                 cross_check: Optional[bool] = None) -> MechanismSolution:
    """Grid search over eta with golden-section refinement around the best
    cell.  Infeasible grid points are skipped; if every point is infeasible
    an InfeasibleError reports the scanned range.  Refinement only ever adds
    evaluations, so the returned objective is never worse than the best raw
    grid value.  The full (eta, objective, pool size) trace is attached.
    """
    _require_ql(instance)
    evals: list[tuple[float, FixedEtaSolution]] = []

    def try_eta(eta: float) -> Optional[FixedEtaSolution]:
        try:
            sol = solve_fixed_eta_ql(instance, eta, cross_check=cross_check)
        except InfeasibleError:
            return None
        evals.append((eta, sol))
        return sol

    etas = np.linspace(grid.lo, grid.hi, grid.points)
    for eta in etas:
        try_eta(float(eta))
    if not evals:
        raise InfeasibleError(
            f"no feasible eta in [{grid.lo}, {grid.hi}] ({grid.points} points)",
        )

    best_eta, best_sol = min(evals, key=lambda e: (e[1].objective, e[0]))
    j = int(np.argmin(np.abs(etas - best_eta)))
    a = float(etas[max(j - 1, 0)])
    b = float(etas[min(j + 1, grid.points - 1)])
    if grid.refine_rounds > 0 and b > a:
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        s1 = try_eta(x1)
        s2 = try_eta(x2)
        y1 = s1.objective if s1 else math.inf
        y2 = s2.objective if s2 else math.inf
        for _ in range(grid.refine_rounds):
            if y1 <= y2:
                b, x2, y2 = x2, x1, y1
                x1 = b - GOLDEN * (b - a)
                s1 = try_eta(x1)
                y1 = s1.objective if s1 else math.inf
            else:
                a, x1, y1 = x1, x2, y2
                x2 = a + GOLDEN * (b - a)
                s2 = try_eta(x2)
                y2 = s2.objective if s2 else math.inf
        best_eta, best_sol = min(evals, key=lambda e: (e[1].objective, e[0]))

    trace = tuple(sorted((eta, sol.objective, sol.pool_size)
                         for eta, sol in evals))
    return MechanismSolution(
        best=best_sol,
        eta_search=GridSearch(grid_points=grid.points, bracket=(grid.lo, grid.hi)),
        per_agent_privacy=best_sol.weights * best_sol.eta,
        trace=trace,
    )
