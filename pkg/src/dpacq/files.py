"""Instance ingestion, generation, and result serialization.

Instances travel as JSON (schema below), sweep traces as CSV.  All floats
are serialized with 17 significant digits so that written values round-trip
binary64 exactly; golden-file tests compare bytes.

Instance schema (version 1)::

    {
      "schema_version": 1,
      "sigma2": 1.0,
      "model": {"privacy_constrained": {"g": {"linear": {"a": 1.0, "b": 0.1}}}}
             | {"quasi_linear": {"f": <benefit>, "outside_option": 0.0}},
      "agents": [{"id": "a1", "tau": 0.9},
                 {"id": "a2", "c": 2.0, "B": 1.2}, ...]
    }

A benefit is ``{"linear": {"a":, "b":}}`` or ``{"piecewise": [[v, value],
...]}``.  Each agent supplies either ``tau`` or both ``c`` and ``B`` (then
tau = B/c is derived); supplying all three requires consistency to 1e-9
relative.  Quasi-linear agents must supply ``c``.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .benefit import BenefitFunction, LinearBenefit, PiecewiseConcaveBenefit
from .errors import ValidationError
from .model import (AgentProfile, ClosedFormSearch, FixedEtaSolution,
                    GridSearch, Instance, MechanismSolution,
                    PrivacyConstrained, QuasiLinear, make_instance)

SCHEMA_VERSION = 1


def fmt17(x: float) -> str:
    """17-significant-digit decimal; round-trips binary64 exactly."""
    return format(float(x), ".17g")


_FLOAT_TOKEN = re.compile(r'"\x00f(\d+)\x00"')


def dumps_17g(obj, indent: int = 2) -> str:
    """json.dumps with every float rendered via :func:`fmt17`."""
    floats: list[float] = []

    def tokenize(x):
        if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
            return x
        if isinstance(x, float):
            floats.append(x)
            return f"\x00f{len(floats) - 1}\x00"
        if isinstance(x, dict):
            return {k: tokenize(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [tokenize(v) for v in x]
        if isinstance(x, np.integer):
            return int(x)
        if isinstance(x, np.floating):
            floats.append(float(x))
            return f"\x00f{len(floats) - 1}\x00"
        raise TypeError(f"cannot serialize {type(x).__name__}")

    doc = json.dumps(tokenize(obj), indent=indent)
    return _FLOAT_TOKEN.sub(lambda m: fmt17(floats[int(m.group(1))]), doc)


def _expect_keys(obj: dict, path: str, required: Iterable[str],
                 optional: Iterable[str] = ()) -> None:
    required = set(required)
    allowed = required | set(optional)
    missing = required - obj.keys()
    if missing:
        raise ValidationError(f"{path}: missing field(s) {sorted(missing)}")
    extra = obj.keys() - allowed
    if extra:
        raise ValidationError(f"{path}: unknown field(s) {sorted(extra)}")


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValidationError(f"{path}: expected a number, got {obj!r}")
    return float(obj)


def _parse_benefit(obj, path: str) -> BenefitFunction:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ValidationError(f"{path}: expected a single-key benefit object")
    (kind, body), = obj.items()
    if kind == "linear":
        if not isinstance(body, dict):
            raise ValidationError(f"{path}.linear: expected an object")
        _expect_keys(body, f"{path}.linear", ("a", "b"))
        return LinearBenefit(a=_number(body["a"], f"{path}.linear.a"),
                             b=_number(body["b"], f"{path}.linear.b"))
    if kind == "piecewise":
        if not isinstance(body, list) or any(
                not isinstance(p, list) or len(p) != 2 for p in body):
            raise ValidationError(f"{path}.piecewise: expected a list of [v, value] pairs")
        pts = tuple((_number(p[0], f"{path}.piecewise[{i}][0]"),
                     _number(p[1], f"{path}.piecewise[{i}][1]"))
                    for i, p in enumerate(body))
        return PiecewiseConcaveBenefit(breakpoints=pts)
    raise ValidationError(f"{path}: unknown benefit kind {kind!r}")


def _benefit_to_dict(benefit: BenefitFunction) -> dict:
    if isinstance(benefit, LinearBenefit):
        return {"linear": {"a": benefit.a, "b": benefit.b}}
    return {"piecewise": [[x, y] for x, y in benefit.breakpoints]}


def load_instance(path) -> Instance:
    """Read, validate, and canonicalize an instance file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(
            f"parse error at line {e.lineno} column {e.colno}: {e.msg}") from e
    return instance_from_dict(doc)


def instance_from_dict(doc) -> Instance:
    if not isinstance(doc, dict):
        raise ValidationError("top level: expected an object")
    _expect_keys(doc, "top level", ("schema_version", "sigma2", "model", "agents"))
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(
            f"schema_version: expected {SCHEMA_VERSION}, got {doc['schema_version']!r}")
    sigma2 = _number(doc["sigma2"], "sigma2")

    model_obj = doc["model"]
    if not isinstance(model_obj, dict) or len(model_obj) != 1:
        raise ValidationError("model: expected a single-key object")
    (kind, body), = model_obj.items()
    if kind == "quasi_linear":
        if not isinstance(body, dict):
            raise ValidationError("model.quasi_linear: expected an object")
        _expect_keys(body, "model.quasi_linear", ("f", "outside_option"))
        model = QuasiLinear(
            benefit=_parse_benefit(body["f"], "model.quasi_linear.f"),
            outside_option=_number(body["outside_option"],
                                   "model.quasi_linear.outside_option"))
    elif kind == "privacy_constrained":
        if not isinstance(body, dict):
            raise ValidationError("model.privacy_constrained: expected an object")
        _expect_keys(body, "model.privacy_constrained", ("g",))
        model = PrivacyConstrained(
            benefit=_parse_benefit(body["g"], "model.privacy_constrained.g"))
    else:
        raise ValidationError(f"model: unknown kind {kind!r}")

    agents_obj = doc["agents"]
    if not isinstance(agents_obj, list) or not agents_obj:
        raise ValidationError("agents: expected a nonempty list")
    ids = []
    agents = []
    for i, entry in enumerate(agents_obj):
        path_i = f"agents[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{path_i}: expected an object")
        _expect_keys(entry, path_i, ("id",), ("c", "B", "tau"))
        if not isinstance(entry["id"], str):
            raise ValidationError(f"{path_i}.id: expected a string")
        aid = entry["id"]
        c = _number(entry["c"], f"{path_i}.c") if "c" in entry else None
        b = _number(entry["B"], f"{path_i}.B") if "B" in entry else None
        tau = _number(entry["tau"], f"{path_i}.tau") if "tau" in entry else None
        if kind == "quasi_linear" and c is None:
            raise ValidationError(f"{path_i} (id {aid!r}): quasi-linear agents need c")
        if kind == "privacy_constrained" and tau is None and (c is None or b is None):
            raise ValidationError(
                f"{path_i} (id {aid!r}): supply tau, or both c and B")
        if tau is not None and tau <= 0:
            raise ValidationError(
                f"{path_i} (id {aid!r}): tau must be positive; zero-threshold "
                "agents never receive weight and can be dropped from the "
                "computation, so remove them from the file")
        try:
            agents.append(AgentProfile(cost_coeff=c, budget=b, threshold=tau))
        except ValidationError as e:
            raise ValidationError(f"{path_i} (id {aid!r}): {e}") from e
        ids.append(aid)
    return make_instance(sigma2, agents, model, ids=ids)


def instance_to_dict(instance: Instance) -> dict:
    """Inverse of :func:`instance_from_dict`, in original input order."""
    if isinstance(instance.model, QuasiLinear):
        model = {"quasi_linear": {
            "f": _benefit_to_dict(instance.model.benefit),
            "outside_option": instance.model.outside_option}}
    else:
        model = {"privacy_constrained": {
            "g": _benefit_to_dict(instance.model.benefit)}}
    agents: list[Optional[dict]] = [None] * instance.n
    for k, pos in enumerate(instance.input_position):
        a = instance.agents[k]
        entry: dict = {"id": instance.ids[k]}
        if a.cost_coeff is not None:
            entry["c"] = a.cost_coeff
        if a.budget is not None:
            entry["B"] = a.budget
        if a.threshold is not None and a.budget is None:
            entry["tau"] = a.threshold
        agents[pos] = entry
    return {"schema_version": SCHEMA_VERSION, "sigma2": instance.sigma2,
            "model": model, "agents": agents}


def write_instance(path, instance: Instance) -> None:
    Path(path).write_text(dumps_17g(instance_to_dict(instance)) + "\n")


def gen_instance(n: int, seed: int, *, model: str = "privacy_constrained",
                 sigma2: float = 1.0,
                 tau_range: tuple[float, float] = (0.01, 1.0),
                 c_range: tuple[float, float] = (0.1, 10.0),
                 benefit: BenefitFunction = LinearBenefit(a=1.0, b=0.1),
                 outside_option: float = 0.0) -> Instance:
    """Deterministic random instance: log-uniform costs or thresholds."""
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    width = len(str(n))
    ids = [f"a{i + 1:0{width}d}" for i in range(n)]
    if model == "privacy_constrained":
        lo, hi = tau_range
        if not (0 < lo <= hi):
            raise ValidationError(f"invalid tau range [{lo}, {hi}]")
        taus = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
        agents = [AgentProfile(threshold=float(t)) for t in taus]
        return make_instance(sigma2, agents, PrivacyConstrained(benefit), ids=ids)
    if model == "quasi_linear":
        lo, hi = c_range
        if not (0 < lo <= hi):
            raise ValidationError(f"invalid c range [{lo}, {hi}]")
        costs = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
        agents = [AgentProfile(cost_coeff=float(c)) for c in costs]
        return make_instance(sigma2, agents,
                             QuasiLinear(benefit, outside_option), ids=ids)
    raise ValidationError(f"unknown model {model!r}")


def _model_name(instance: Instance) -> str:
    return "quasi_linear" if isinstance(instance.model, QuasiLinear) else \
        "privacy_constrained"


def _constraint_slacks(instance: Instance, sol: FixedEtaSolution) -> np.ndarray:
    w = sol.weights
    if isinstance(instance.model, PrivacyConstrained):
        return instance.thresholds() - w * sol.eta
    f = instance.model.benefit
    margin = f.value(sol.objective) - instance.model.outside_option
    return margin - instance.costs() * w * sol.eta


def eta_search_meta(search) -> dict:
    if isinstance(search, ClosedFormSearch):
        return {"method": "closed_form", "t": search.t}
    if isinstance(search, GridSearch):
        return {"method": "grid_search", "grid_points": search.grid_points,
                "bracket": [search.bracket[0], search.bracket[1]]}
    return {"method": "fixed"}


def solution_to_dict(instance: Instance, sol: FixedEtaSolution,
                     search_meta: Optional[dict] = None,
                     kkt: Optional[dict] = None) -> dict:
    """SolutionFile document; agent keys restored to input order."""
    order = np.argsort(np.asarray(instance.input_position))
    weights = {}
    per_agent = {}
    slacks = _constraint_slacks(instance, sol)
    for k in order:
        aid = instance.ids[k]
        w = float(sol.weights[k])
        weights[aid] = w
        per_agent[aid] = {
            "weight": w,
            "epsilon": w * sol.eta,
            "constraint_slack": float(slacks[k]),
        }
    structure = {"t": int(sol.pool_size), "W": float(sol.pooled_weight)}
    if isinstance(instance.model, QuasiLinear):
        structure["K"] = None if sol.scale is None else float(sol.scale)
    return {
        "schema_version": SCHEMA_VERSION,
        "model": _model_name(instance),
        "eta": float(sol.eta),
        "objective": float(sol.objective),
        "structure": structure,
        "weights": weights,
        "per_agent": per_agent,
        "diagnostics": {
            "kkt": kkt,
            "oracle_gap": sol.oracle_gap,
            "eta_search": search_meta or {"method": "fixed"},
        },
    }


def write_solution(path, doc: dict) -> None:
    Path(path).write_text(dumps_17g(doc) + "\n")


def load_solution(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(
            f"parse error at line {e.lineno} column {e.colno}: {e.msg}") from e


def emit_trace_csv(trace, path) -> None:
    """Write an (eta, objective, pool_size) trace.

    Header ``eta,objective,pool_size``; rows in ascending eta; floats with 17
    significant digits; LF newlines with exactly one LF after the last row.
    """
    rows = sorted((float(e), float(v), int(t)) for e, v, t in trace)
    if not rows:
        raise ValidationError("trace must be nonempty")
    lines = ["eta,objective,pool_size"]
    lines.extend(f"{fmt17(e)},{fmt17(v)},{t}" for e, v, t in rows)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def mechanism_solution_to_dict(instance: Instance, ms: MechanismSolution,
                               kkt: Optional[dict] = None) -> dict:
    return solution_to_dict(instance, ms.best,
                            search_meta=eta_search_meta(ms.eta_search), kkt=kkt)
