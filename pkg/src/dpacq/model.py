"""Domain types and closed-form primitives for weighted DP mean estimation.

The platform publishes weights w (summing to 1) and a Laplace noise level
eta; the estimate is ``sum_i w_i d_i + Z`` with Z ~ Laplace(scale 1/eta).
Its variance is ``sigma2 * sum w_i^2 + 2/eta^2`` and agent i experiences
differential privacy level ``eps_i = w_i * eta``.  Everything in this module
is a pure function of its arguments; sampling is pure given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .benefit import BenefitFunction
from .errors import ValidationError

# Relative tolerance for "is this constraint satisfied" boundary checks.
# Closed-form optima place agents exactly on constraint boundaries, so
# feasibility tests must not flip on the last bit.
BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class AgentProfile:
    """One agent's privacy parameters.

    ``cost_coeff`` is the privacy cost per unit of privacy level (c_i),
    ``budget`` the maximum privacy cost tolerated (B_i, privacy-constrained
    model only) and ``threshold`` the largest w_i*eta the agent accepts
    (tau_i = B_i / c_i).  ``threshold`` is derived when budget and cost are
    given; zero thresholds are rejected because such agents can only ever
    receive zero weight and are dropped before solving.
    """

    cost_coeff: Optional[float] = None
    budget: Optional[float] = None
    threshold: Optional[float] = None

    def __post_init__(self):
        c, b, tau = self.cost_coeff, self.budget, self.threshold
        for name, val in (("cost_coeff", c), ("budget", b), ("threshold", tau)):
            if val is not None and not np.isfinite(val):
                raise ValidationError(f"{name} must be finite, got {val}")
        if c is not None and c < 0:
            raise ValidationError(f"cost_coeff must be >= 0, got {c}")
        if b is not None and b <= 0:
            raise ValidationError(f"budget must be > 0, got {b}")
        if tau is not None and tau <= 0:
            raise ValidationError(f"threshold must be > 0, got {tau}")
        if b is not None and tau is None:
            if c is None or c <= 0:
                raise ValidationError(
                    "a budget needs a positive cost_coeff to derive the threshold")
            object.__setattr__(self, "threshold", b / c)
        elif b is not None and tau is not None and c is not None:
            if c <= 0:
                raise ValidationError(
                    "a budget needs a positive cost_coeff to derive the threshold")
            derived = b / c
            if abs(tau - derived) > 1e-9 * max(abs(tau), abs(derived)):
                raise ValidationError(
                    f"threshold {tau} inconsistent with budget/cost_coeff = {derived}")


@dataclass(frozen=True)
class QuasiLinear:
    """Quasi-linear agent model: benefit f(variance) minus privacy cost."""

    benefit: BenefitFunction
    outside_option: float = 0.0


@dataclass(frozen=True)
class PrivacyConstrained:
    """Privacy-constrained agent model: benefit g(variance) under a hard cap."""

    benefit: BenefitFunction


ModelKind = Union[QuasiLinear, PrivacyConstrained]


@dataclass(frozen=True)
class Instance:
    """A full problem instance, in canonical sorted agent order.

    Quasi-linear instances are sorted by nondecreasing cost; privacy-
    constrained instances by nonincreasing threshold.  ``input_position[k]``
    gives the original index of the agent now at sorted position k, and
    results are un-permuted at the output boundary (see the file writers).
    Instances are immutable; build them with :func:`make_instance`.
    """

    sigma2: float
    agents: tuple[AgentProfile, ...]
    model: ModelKind
    ids: tuple[str, ...]
    input_position: tuple[int, ...]

    def __post_init__(self):
        costs = np.array(
            [np.nan if a.cost_coeff is None else a.cost_coeff for a in self.agents])
        thresholds = np.array(
            [np.nan if a.threshold is None else a.threshold for a in self.agents])
        object.__setattr__(self, "_costs", costs)
        object.__setattr__(self, "_thresholds", thresholds)

    @property
    def n(self) -> int:
        return len(self.agents)

    def costs(self) -> np.ndarray:
        """Cost coefficients in sorted order (quasi-linear instances)."""
        return self._costs

    def thresholds(self) -> np.ndarray:
        """Privacy thresholds in sorted order (privacy-constrained instances)."""
        return self._thresholds

    def is_quasilinear(self) -> bool:
        return isinstance(self.model, QuasiLinear)

    def with_thresholds(self, new_thresholds: Sequence[float]) -> "Instance":
        """A new instance with thresholds replaced (given in this instance's
        sorted order) and agents re-sorted; ids follow their agents."""
        agents = [replace(a, threshold=float(t), budget=None)
                  for a, t in zip(self.agents, new_thresholds)]
        inv = np.argsort(np.asarray(self.input_position))
        input_agents = [agents[k] for k in inv]
        input_ids = [self.ids[k] for k in inv]
        return make_instance(self.sigma2, input_agents, self.model, ids=input_ids)


def make_instance(sigma2: float, agents: Sequence[AgentProfile],
                  model: ModelKind, ids: Optional[Sequence[str]] = None) -> Instance:
    """Validate, sort, and assemble an :class:`Instance`."""
    if len(agents) == 0:
        raise ValidationError("an instance needs at least one agent")
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValidationError(f"sigma2 must be positive and finite, got {sigma2}")
    if ids is None:
        ids = [f"a{i}" for i in range(len(agents))]
    ids = [str(s) for s in ids]
    if len(ids) != len(agents):
        raise ValidationError("ids and agents must have the same length")
    if len(set(ids)) != len(ids):
        raise ValidationError("agent ids must be unique")

    if isinstance(model, QuasiLinear):
        for aid, a in zip(ids, agents):
            if a.cost_coeff is None:
                raise ValidationError(f"agent {aid}: quasi-linear model needs cost_coeff")
        key = np.array([a.cost_coeff for a in agents])
        order = np.argsort(key, kind="stable")
    elif isinstance(model, PrivacyConstrained):
        for aid, a in zip(ids, agents):
            if a.threshold is None:
                raise ValidationError(
                    f"agent {aid}: privacy-constrained model needs a threshold "
                    "(tau, or budget plus cost_coeff)")
        key = -np.array([a.threshold for a in agents])
        order = np.argsort(key, kind="stable")
    else:
        raise ValidationError(f"unknown model kind: {model!r}")

    return Instance(
        sigma2=float(sigma2),
        agents=tuple(agents[k] for k in order),
        model=model,
        ids=tuple(ids[k] for k in order),
        input_position=tuple(int(k) for k in order),
    )


@dataclass(frozen=True)
class FixedEtaSolution:
    """Optimal weights for one noise level eta.

    Weights are in sorted-instance order; the first ``pool_size`` agents all
    carry ``pooled_weight`` and the rest sit on their binding constraint.
    ``scale`` is the common tight-constraint product K (quasi-linear only;
    absent when no agent is capped).  ``oracle_gap`` is filled in when an
    independent cross-check ran during the solve.
    """

    eta: float
    weights: np.ndarray
    pool_size: int
    pooled_weight: float
    scale: Optional[float]
    objective: float
    oracle_gap: Optional[float] = None


@dataclass(frozen=True)
class ClosedFormSearch:
    """eta found by the closed-form pool-size scan."""

    t: int


@dataclass(frozen=True)
class GridSearch:
    """eta found by grid search plus local refinement."""

    grid_points: int
    bracket: tuple[float, float]


@dataclass(frozen=True)
class MechanismSolution:
    """The eta-optimized answer: best fixed-eta solution plus search metadata."""

    best: FixedEtaSolution
    eta_search: Union[ClosedFormSearch, GridSearch]
    per_agent_privacy: np.ndarray
    trace: Optional[tuple[tuple[float, float, int], ...]] = None
    diagnostics: Optional[dict] = None


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("weights must be a nonempty 1-d vector")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite")
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    return w


def _check_eta(eta: float) -> float:
    if not (np.isfinite(eta) and eta > 0):
        raise ValidationError(f"eta must be positive and finite, got {eta}")
    return float(eta)


def variance(weights, sigma2: float, eta: float) -> float:
    """Estimator variance sigma2 * sum w_i^2 + 2/eta^2."""
    w = _check_weights(weights)
    eta = _check_eta(eta)
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValidationError(f"sigma2 must be positive and finite, got {sigma2}")
    return float(sigma2 * float(w @ w) + 2.0 / (eta * eta))


def privacy_level(weight: float, eta: float) -> float:
    """Differential privacy level w * eta experienced by one agent."""
    eta = _check_eta(eta)
    if not (np.isfinite(weight) and weight >= 0):
        raise ValidationError(f"weight must be nonnegative and finite, got {weight}")
    return float(weight) * eta


def utility_quasilinear(instance: Instance, weights, eta: float, agent: int) -> float:
    """Agent utility f(variance) - c_i * w_i * eta.

    The outside option is not subtracted here; comparing against it is the
    participation logic's job.
    """
    if not isinstance(instance.model, QuasiLinear):
        raise ValidationError("utility_quasilinear needs a quasi-linear instance")
    w = _check_weights(weights)
    if not 0 <= agent < w.size:
        raise IndexError(f"agent index {agent} out of range for {w.size} weights")
    v = variance(w, instance.sigma2, eta)
    c = instance.costs()[agent]
    return float(instance.model.benefit.value(v) - c * w[agent] * eta)


def utility_privacyconstrained(instance: Instance, weights, eta: float,
                               agent: int, true_threshold: float) -> float:
    """Agent utility g(variance) if the privacy cap holds, else -inf.

    The cap check allows a relative slack of BOUNDARY_RTOL so that agents
    placed exactly on their boundary by a solver count as satisfied.
    """
    if not isinstance(instance.model, PrivacyConstrained):
        raise ValidationError("utility_privacyconstrained needs a privacy-constrained instance")
    w = _check_weights(weights)
    if not 0 <= agent < w.size:
        raise IndexError(f"agent index {agent} out of range for {w.size} weights")
    if w[agent] * eta > true_threshold * (1.0 + BOUNDARY_RTOL):
        return float("-inf")
    v = variance(w, instance.sigma2, eta)
    return float(instance.model.benefit.value(v))


def laplace_noise(eta: float, size: int, seed: int) -> np.ndarray:
    """Laplace(scale 1/eta) samples from a named, reproducible stream.

    Stream: numpy Philox seeded with ``seed`` (via SeedSequence); one block of
    ``size`` uniforms u in [-1/2, 1/2) mapped through the inverse CDF
    Z = -sign(u) * ln(1 - 2|u|) / eta.  Exact, branch-simple, and identical
    across platforms for a fixed numpy major version.
    """
    eta = _check_eta(eta)
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random(size) - 0.5
    u = np.where(u == -0.5, 0.0, u)  # (-1/2, 1/2) open interval
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u)) / eta


def sample_estimate(data, weights, eta: float, rng_seed: int) -> float:
    """One draw of the private estimate sum_i w_i d_i + Z(eta)."""
    d = np.asarray(data, dtype=float)
    w = _check_weights(weights)
    if d.shape != w.shape:
        raise ValidationError(f"data length {d.shape} != weights length {w.shape}")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValidationError("weights must sum to 1")
    z = laplace_noise(eta, 1, rng_seed)[0]
    return float(d @ w + z)
