"""Variance-optimal weighted, differentially private mean estimation for
platforms acquiring data from privacy-aware agents.

Two agent models are supported: quasi-linear (benefit minus linear privacy
cost against an outside option) and privacy-constrained (hard per-agent
privacy caps).  Both admit structured optima — a pooled prefix of agents
sharing one weight, then weights decreasing along the binding constraints —
which the solvers here compute exactly, cross-checked by independent
first-principles oracles and KKT certificates.
"""

from .benefit import BenefitFunction, LinearBenefit, PiecewiseConcaveBenefit
from .errors import (DpacqError, InfeasibleError, InternalConsistencyError,
                     OracleFailureError, ValidationError)
from .files import (emit_trace_csv, gen_instance, load_instance,
                    load_solution, solution_to_dict, write_instance,
                    write_solution)
from .model import (AgentProfile, ClosedFormSearch, FixedEtaSolution,
                    GridSearch, Instance, MechanismSolution,
                    PrivacyConstrained, QuasiLinear, laplace_noise,
                    make_instance, privacy_level, sample_estimate,
                    utility_privacyconstrained, utility_quasilinear, variance)
from .oracles import (KktReport, grid_min_1d, kkt_certify_pc, kkt_certify_ql,
                      oracle_fixed_eta_pc, oracle_fixed_eta_pc_batch,
                      oracle_fixed_eta_ql, project_capped_simplex,
                      project_simplex)
from .pc import (PcEtaCandidate, eta_interval, eta_star_closed_form,
                 feasible_eta_upper, h_objective, pc_eta_candidates,
                 solve_fixed_eta_pc, solve_pc)
from .ql import (QlCandidate, SweepGrid, default_sweep_grid, ql_candidates,
                 solve_fixed_eta_ql, solve_K_bisection, solve_K_linear_f,
                 sweep_eta_ql)
from .sim import (AuditResult, EmpiricalVarianceReport, empirical_variance,
                  misreport_audit_pc, participation_fixed_point)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
