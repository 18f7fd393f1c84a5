"""Exact solver for the privacy-constrained model.

At fixed eta the optimal weights water-fill against the caps tau_i/eta: a
pooled prefix shares a common level W and the rest sit exactly on their cap.
Restricted to a pool size t, the optimal objective as a function of eta is
unimodal with a closed-form stationary point, so one O(n) scan over t (after
the instance's one-time sort) finds the jointly optimal (w, eta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, InternalConsistencyError, ValidationError
from .model import (BOUNDARY_RTOL, ClosedFormSearch, FixedEtaSolution, Instance,
                    MechanismSolution, PrivacyConstrained)


@dataclass(frozen=True)
class PcEtaCandidate:
    """One pool size's best eta: the stationary point of the per-t objective,
    clamped to the eta-interval on which that pool size is consistent."""

    t: int
    eta_unconstrained: float
    eta_clamped: float
    objective: float
    interval: tuple[float, float]


def _check_thresholds(thresholds) -> np.ndarray:
    tau = np.asarray(thresholds, dtype=float)
    if tau.ndim != 1 or tau.size == 0:
        raise ValidationError("thresholds must be a nonempty 1-d vector")
    if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
        raise ValidationError("thresholds must be positive and finite")
    if np.any(np.diff(tau) > 0):
        raise ValidationError("thresholds must be sorted nonincreasing")
    return tau


def feasible_eta_upper(thresholds) -> float:
    """Largest feasible eta for the fixed-eta program: sum of thresholds.

    Summing the caps w_i <= tau_i/eta over the weight constraint sum w_i = 1
    shows the program is feasible iff 0 < eta <= sum tau_i.
    """
    tau = _check_thresholds(thresholds)
    return float(tau.sum())


def solve_fixed_eta_pc(thresholds, sigma2: float, eta: float) -> FixedEtaSolution:
    """Water-filling optimum of the fixed-eta privacy-constrained program.

    Returns w_i = min(W, tau_i/eta) with W the unique level making the
    weights sum to 1.  The pool size reported is the largest t whose pooled/
    capped split is consistent (boundary agents count as pooled).
    """
    tau = _check_thresholds(thresholds)
    if not (np.isfinite(eta) and eta > 0):
        raise ValidationError(f"eta must be positive and finite, got {eta}")
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValidationError(f"sigma2 must be positive and finite, got {sigma2}")
    bound = float(tau.sum())
    if eta > bound * (1.0 + BOUNDARY_RTOL):
        raise InfeasibleError(
            f"eta={eta} exceeds the feasibility bound sum(tau)={bound}",
            eta=float(eta), bound=bound)

    n = tau.size
    caps = tau / eta  # nonincreasing
    # tail_caps[t] = sum of caps[t:], t = 0..n
    tail_caps = np.zeros(n + 1)
    tail_caps[:n] = np.cumsum(caps[::-1])[::-1]
    ts = np.arange(1, n + 1)
    levels = (1.0 - tail_caps[1:]) / ts  # candidate W for each pool size t
    # pool size t is consistent iff caps[t] <= W(t) <= caps[t-1] (boundaries in)
    ok_hi = levels <= caps * (1.0 + BOUNDARY_RTOL) + 1e-15
    ok_lo = np.empty(n, dtype=bool)
    ok_lo[: n - 1] = levels[: n - 1] >= caps[1:] * (1.0 - BOUNDARY_RTOL) - 1e-15
    ok_lo[n - 1] = True
    valid = np.nonzero(ok_hi & ok_lo)[0]
    if valid.size == 0:
        raise InternalConsistencyError(
            "water-filling scan found no consistent pool size; "
            f"eta={eta}, sum(tau)={bound}")
    t = int(valid[-1]) + 1  # largest consistent pool size
    level = float(levels[t - 1])

    weights = np.empty(n)
    weights[:t] = level
    weights[t:] = caps[t:]
    objective = float(sigma2 * float(weights @ weights) + 2.0 / (eta * eta))
    return FixedEtaSolution(eta=float(eta), weights=weights, pool_size=t,
                            pooled_weight=level, scale=None, objective=objective)


def h_objective(eta: float, thresholds, sigma2: float, t: int) -> float:
    """Objective of the pool-size-t solution as a function of eta.

    (sigma2/t)(1 - (1/eta) * sum_{i>t} tau_i)^2
      + (sigma2/eta^2) * sum_{i>t} tau_i^2 + 2/eta^2.
    Equals the variance of the water-filled solution whenever t is the
    consistent pool size at that eta.
    """
    tau = _check_thresholds(thresholds)
    n = tau.size
    if not 1 <= t <= n:
        raise ValidationError(f"pool size t={t} out of range [1, {n}]")
    if not (np.isfinite(eta) and eta > 0):
        raise ValidationError(f"eta must be positive and finite, got {eta}")
    tail1 = float(tau[t:].sum())
    tail2 = float((tau[t:] ** 2).sum())
    return (sigma2 / t * (1.0 - tail1 / eta) ** 2
            + sigma2 / (eta * eta) * tail2 + 2.0 / (eta * eta))


def eta_star_closed_form(thresholds, sigma2: float, t: int) -> float:
    """Unique stationary point of the pool-size-t objective in eta.

    eta* = ((sum_{i>t} tau_i)^2 + t * sum_{i>t} tau_i^2 + 2t/sigma2)
           / sum_{i>t} tau_i.
    Requires a nonempty tail (t <= n-1); with the tail empty the objective is
    monotone decreasing in eta and has no stationary point, so callers must
    take the t = n branch (right endpoint of the feasible interval) instead.
    """
    tau = _check_thresholds(thresholds)
    n = tau.size
    if not 1 <= t <= n - 1:
        raise ValidationError(
            f"eta_star_closed_form needs 1 <= t <= n-1 (empty tail at t={t}; "
            "use the t = n branch, whose objective is monotone in eta)")
    tail1 = float(tau[t:].sum())
    tail2 = float((tau[t:] ** 2).sum())
    return (tail1 * tail1 + t * tail2 + 2.0 * t / sigma2) / tail1


def eta_interval(thresholds, t: int) -> tuple[float, float]:
    """eta-range on which pool size t is consistent: [sum_{i>t} tau_i,
    t*tau_t + sum_{i>t} tau_i], from W >= 0 and W*eta <= tau_t."""
    tau = _check_thresholds(thresholds)
    n = tau.size
    if not 1 <= t <= n:
        raise ValidationError(f"pool size t={t} out of range [1, {n}]")
    tail1 = float(tau[t:].sum())
    return (tail1, t * float(tau[t - 1]) + tail1)


def pc_eta_candidates(thresholds, sigma2: float) -> list[PcEtaCandidate]:
    """Per-pool-size clamped stationary points, deduplicated by
    (eta, objective).  Diagnostic view of the scan in :func:`solve_pc`."""
    tau = _check_thresholds(thresholds)
    etas, objs, ts, lo, hi, stat = _scan_arrays(tau, sigma2)
    # the clamped-stationary entries occupy the first n slots
    out = []
    seen = set()
    for k in range(tau.size):
        cand = PcEtaCandidate(t=int(ts[k]), eta_unconstrained=float(stat[k]),
                              eta_clamped=float(etas[k]), objective=float(objs[k]),
                              interval=(float(lo[k]), float(hi[k])))
        key = (cand.eta_clamped, cand.objective)
        if key not in seen:
            seen.add(key)
            out.append(cand)
    return out


def _scan_arrays(tau: np.ndarray, sigma2: float):
    """Vectorized candidate arrays for the pool-size scan.

    For each t in 1..n, three evaluation points: the clamped stationary point
    and both interval endpoints (entries with eta <= 0 are masked to +inf
    objective).  Returns (etas, objectives, ts, los, his, stationary).
    """
    n = tau.size
    tail1 = np.zeros(n + 1)
    tail1[:n] = np.cumsum(tau[::-1])[::-1]
    tail2 = np.zeros(n + 1)
    tail2[:n] = np.cumsum((tau ** 2)[::-1])[::-1]
    ts = np.arange(1, n + 1, dtype=float)
    T = tail1[1:]
    Q = tail2[1:]
    lo = T.copy()
    hi = ts * tau + T
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(T > 0, (T * T + ts * Q + 2.0 * ts / sigma2) / T, np.inf)
    clamped = np.clip(stat, lo, hi)

    etas = np.concatenate([clamped, lo, hi])
    ts3 = np.concatenate([ts, ts, ts])
    T3 = np.concatenate([T, T, T])
    Q3 = np.concatenate([Q, Q, Q])
    with np.errstate(divide="ignore", invalid="ignore"):
        objs = np.where(
            etas > 0,
            sigma2 / ts3 * (1.0 - T3 / etas) ** 2
            + (sigma2 * Q3 + 2.0) / (etas * etas),
            np.inf)
    lo3 = np.concatenate([lo, lo, lo])
    hi3 = np.concatenate([hi, hi, hi])
    stat3 = np.concatenate([stat, stat, stat])
    return etas, objs, ts3, lo3, hi3, stat3


def solve_pc(instance: Instance) -> MechanismSolution:
    """Jointly optimal (weights, eta) for a privacy-constrained instance.

    Scans pool sizes t = 1..n with prefix sums (O(n) total), evaluating the
    per-t objective at its clamped stationary point and at both interval
    endpoints.  Ties break toward smaller objective, then smaller eta, then
    smaller t, so any chunked parallel scan with the same reduction is
    bit-identical to this sequential one.  The winner's weights are re-derived
    by the fixed-eta water-filler, which also re-partitions the pool if the
    winning eta sits on an interval boundary where W would degenerate to 0.
    """
    if not isinstance(instance.model, PrivacyConstrained):
        raise ValidationError("solve_pc needs a privacy-constrained instance")
    tau = instance.thresholds()
    sigma2 = instance.sigma2
    etas, objs, ts, lo, hi, stat = _scan_arrays(tau, sigma2)

    finite = np.isfinite(objs)
    order = np.lexsort((ts[finite], etas[finite], objs[finite]))
    idx = np.nonzero(finite)[0][order[0]]
    eta_win = float(etas[idx])
    t_win = int(ts[idx])

    best = solve_fixed_eta_pc(tau, sigma2, eta_win)
    diagnostics = {
        "scan_t": t_win,
        "scan_objective": float(objs[idx]),
        "eta_interval_tail_form": (float(lo[idx]), float(hi[idx])),
        "eta_interval_head_form": _head_form_interval(tau, t_win),
    }
    if tau.size <= 4096:
        diagnostics["candidates"] = pc_eta_candidates(tau, sigma2)
    return MechanismSolution(
        best=best,
        eta_search=ClosedFormSearch(t=t_win),
        per_agent_privacy=best.weights * best.eta,
        diagnostics=diagnostics,
    )


def _head_form_interval(tau: np.ndarray, t: int) -> tuple[float, float]:
    # Alternative interval convention with head-indexed sums, recorded for
    # diagnosis only; the solver uses the tail-sum form.
    head = float(tau[: min(t + 1, tau.size)].sum())
    return (head, t * float(tau[t - 1]) + head)
