"""Agent-behavior layer: participation, misreport audits, Monte Carlo checks.

Participation follows the announced-mechanism order of operations: weights
and eta are published first, then each agent decides.  The misreport audit
replays the platform's solve against a grid of false thresholds and scores
the deviating agent by its true utility; the solvers' incentive guarantees
say no report should ever beat the truth, and the audit verifies exactly
that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, ValidationError
from .model import (BOUNDARY_RTOL, Instance, PrivacyConstrained, QuasiLinear,
                    variance)
from .pc import solve_fixed_eta_pc, solve_pc


@dataclass(frozen=True)
class AuditResult:
    """Outcome of one agent's misreport audit.

    ``utilities[j]`` is the agent's true utility when reporting
    ``reports_tested[j]`` (-inf when the realized privacy level breaks the
    true threshold, or the platform's program becomes infeasible);
    ``max_gain`` is the best improvement over truth-telling across the grid.
    ``platform_objectives`` records the platform's optimum per report so
    tests can confirm that under-reports genuinely constrain the mechanism.
    """

    agent: int
    true_threshold: float
    reports_tested: tuple[float, ...]
    utilities: tuple[float, ...]
    truthful_utility: float
    max_gain: float
    variant: str
    platform_objectives: tuple[float, ...]


def participation_fixed_point(instance: Instance, weights, eta: float) -> set[int]:
    """Agents (sorted-order indices) who participate given announced (w, eta).

    Privacy-constrained agents decide one-shot from their own cap.  Quasi-
    linear agents compare benefit-minus-cost against the outside option,
    where the benefit depends on who else participates; iterating removals
    from full participation reaches the greatest fixed point.  Announced
    weights are never redistributed: departed agents simply contribute no
    data, so the variance sums over the current participant set only.
    """
    w = np.asarray(weights, dtype=float)
    if w.size != instance.n:
        raise ValidationError("weights must cover the full population")
    if isinstance(instance.model, PrivacyConstrained):
        tau = instance.thresholds()
        ok = w * eta <= tau * (1.0 + BOUNDARY_RTOL)
        return set(np.nonzero(ok)[0].tolist())

    model = instance.model
    assert isinstance(model, QuasiLinear)
    c = instance.costs()
    sigma2 = instance.sigma2
    noise = 2.0 / (eta * eta)
    members = np.ones(instance.n, dtype=bool)
    while True:
        v = sigma2 * float((w[members] ** 2).sum()) + noise
        benefit = model.benefit.value(v)
        util = benefit - c * w * eta
        leave = members & (util < model.outside_option)
        if not leave.any():
            return set(np.nonzero(members)[0].tolist())
        members &= ~leave


def _true_utility(instance: Instance, weights: np.ndarray, eta: float,
                  agent: int, true_threshold: float, objective: float) -> float:
    if weights[agent] * eta > true_threshold * (1.0 + BOUNDARY_RTOL):
        return float("-inf")
    assert isinstance(instance.model, PrivacyConstrained)
    return float(instance.model.benefit.value(objective))


def misreport_audit_pc(instance: Instance, agent: int,
                       report_grid: tuple[float, float, int] = (0.2, 5.0, 50),
                       variant: str = "joint",
                       eta: float | None = None) -> AuditResult:
    """Audit one agent's threshold misreports against the platform's solve.

    ``report_grid`` = (lo_frac, hi_frac, points) spans multiples of the true
    threshold.  ``variant='joint'`` re-runs the full (w, eta) optimization
    per report; ``variant='fixed_eta'`` re-runs the fixed-eta program at
    ``eta`` (default: the truthful joint optimum's eta), scoring reports
    that make the program infeasible as -inf.  ``agent`` indexes the sorted
    instance order.
    """
    if not isinstance(instance.model, PrivacyConstrained):
        raise ValidationError("misreport audits apply to privacy-constrained instances")
    if not 0 <= agent < instance.n:
        raise IndexError(f"agent index {agent} out of range")
    lo_frac, hi_frac, points = report_grid
    if points < 3:
        raise ValidationError("report grid needs at least 3 points")
    if not 0 < lo_frac <= hi_frac:
        raise ValidationError("report grid fractions must be positive and ordered")
    if variant not in ("joint", "fixed_eta"):
        raise ValidationError(f"unknown audit variant {variant!r}")

    tau = instance.thresholds()
    tau_true = float(tau[agent])
    agent_id = instance.ids[agent]

    truthful = solve_pc(instance)
    if variant == "fixed_eta":
        eta_fixed = truthful.best.eta if eta is None else float(eta)
        truth_sol = solve_fixed_eta_pc(tau, instance.sigma2, eta_fixed)
    else:
        truth_sol = truthful.best
    truthful_utility = _true_utility(
        instance, truth_sol.weights, truth_sol.eta, agent, tau_true,
        truth_sol.objective)

    reports = np.linspace(lo_frac, hi_frac, points) * tau_true
    utilities = []
    objectives = []
    for report in reports:
        new_tau = tau.copy()
        new_tau[agent] = report
        reported = instance.with_thresholds(new_tau)
        pos = reported.ids.index(agent_id)
        try:
            if variant == "joint":
                sol = solve_pc(reported).best
            else:
                sol = solve_fixed_eta_pc(reported.thresholds(), instance.sigma2,
                                         eta_fixed)
        except InfeasibleError:
            utilities.append(float("-inf"))
            objectives.append(float("inf"))
            continue
        objectives.append(sol.objective)
        utilities.append(_true_utility(reported, sol.weights, sol.eta, pos,
                                       tau_true, sol.objective))

    gains = [u - truthful_utility for u in utilities]
    return AuditResult(
        agent=agent,
        true_threshold=tau_true,
        reports_tested=tuple(float(r) for r in reports),
        utilities=tuple(utilities),
        truthful_utility=truthful_utility,
        max_gain=max(gains),
        variant=variant,
        platform_objectives=tuple(objectives),
    )


@dataclass(frozen=True)
class EmpiricalVarianceReport:
    mean: float
    variance: float
    stderr_variance: float


def empirical_variance(instance: Instance, weights, eta: float, trials: int,
                       rng_seed: int, data_mean: float,
                       distribution: str = "gaussian") -> EmpiricalVarianceReport:
    """Monte Carlo check of the estimator's analytic variance.

    Draws ``trials`` fresh datasets (i.i.d. with the given mean and the
    instance's sigma2; Gaussian by default, 'uniform' matches the first two
    moments) plus Laplace noise, and reports the sample mean, sample
    variance, and the jackknife standard error of the variance.

    Randomness comes from one Philox stream keyed by ``rng_seed``, consumed
    in a fixed order: the trials x n data matrix first, then the noise
    uniforms; trial j owns row j, so any parallel split over trials that
    respects row ownership reproduces these results bit-for-bit.  The data
    draw count does not depend on eta, which lets paired runs at different
    noise levels share their data.
    """
    if trials < 1000:
        raise ValidationError(f"need at least 1000 trials, got {trials}")
    w = np.asarray(weights, dtype=float)
    n = w.size
    rng = np.random.Generator(np.random.Philox(rng_seed))
    sd = float(np.sqrt(instance.sigma2))
    if distribution == "gaussian":
        data = rng.normal(loc=data_mean, scale=sd, size=(trials, n))
    elif distribution == "uniform":
        half = sd * np.sqrt(3.0)
        data = rng.uniform(data_mean - half, data_mean + half, size=(trials, n))
    else:
        raise ValidationError(f"unknown distribution {distribution!r}")
    u = rng.random(trials) - 0.5
    u = np.where(u == -0.5, 0.0, u)
    noise = -np.sign(u) * np.log1p(-2.0 * np.abs(u)) / eta

    estimates = data @ w + noise
    mean = float(estimates.mean())
    var = float(estimates.var(ddof=1))

    # Leave-one-out variances in closed form, then the jackknife stderr.
    m = trials
    d = estimates - mean
    ss = float((d * d).sum())
    loo = (ss - (m / (m - 1.0)) * d * d) / (m - 2.0)
    loo_mean = float(loo.mean())
    stderr = float(np.sqrt((m - 1.0) / m * float(((loo - loo_mean) ** 2).sum())))
    return EmpiricalVarianceReport(mean=mean, variance=var, stderr_variance=stderr)


def analytic_variance(instance: Instance, weights, eta: float) -> float:
    """Convenience wrapper: the closed-form estimator variance."""
    return variance(weights, instance.sigma2, eta)
