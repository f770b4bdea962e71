"""Prophet inequalities for matchings under batched arrivals, with exact and Monte-Carlo engines."""

from .core import (
    EXACT,
    FLOAT,
    BatchStructure,
    CapacityError,
    CertificationError,
    ContractError,
    DiscreteJointDistribution,
    DomainError,
    ExplicitFamily,
    Graph,
    Instance,
    MatchingFamily,
    NumericPolicy,
    ProphetMatchError,
    batches_of,
    dumps_instance,
    is_feasible,
    loads_instance,
    weight_of,
)
from .estimation import exact_expectation, mc_expectation, selectability_report
from .ocrs import EdgeOCRS, FractionalVertexOCRS, VertexOCRS, constant, solve_improved_c
from .oracles import ex_ante_opt, fractional_matching_opt, max_weight_feasible_set, max_weight_matching
from .prophet import (
    dynamic_pricing,
    edge_ocrs_ex_ante,
    greedy_online,
    optimal_online,
    optimal_online_value,
    prophet_generic_family,
    prophet_via_fractional_ocrs,
    prophet_via_ocrs,
    run_online,
)
from .sampling import exact_marginals, exact_offline

__version__ = "0.1.0"

__all__ = [
    "batches_of",
    "BatchStructure",
    "CapacityError",
    "CertificationError",
    "constant",
    "ContractError",
    "DiscreteJointDistribution",
    "DomainError",
    "dumps_instance",
    "dynamic_pricing",
    "edge_ocrs_ex_ante",
    "EdgeOCRS",
    "ex_ante_opt",
    "EXACT",
    "exact_expectation",
    "exact_marginals",
    "exact_offline",
    "ExplicitFamily",
    "FLOAT",
    "fractional_matching_opt",
    "FractionalVertexOCRS",
    "Graph",
    "greedy_online",
    "Instance",
    "is_feasible",
    "loads_instance",
    "MatchingFamily",
    "max_weight_feasible_set",
    "max_weight_matching",
    "mc_expectation",
    "NumericPolicy",
    "optimal_online",
    "optimal_online_value",
    "prophet_generic_family",
    "prophet_via_fractional_ocrs",
    "prophet_via_ocrs",
    "ProphetMatchError",
    "run_online",
    "selectability_report",
    "solve_improved_c",
    "VertexOCRS",
    "weight_of",
]
