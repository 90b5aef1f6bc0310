"""Band-of-inaction policies for estimation under fixed switching costs."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BernoulliModel,
    LinearGaussianModel,
    PenaltySpec,
    constant_signal,
    curvature_from_rho,
    validate_model,
)
from .kalman import FilterState, closed_form_P, filter_step, riccati_step, sigma_of_t  # noqa: E402
from .policy import (  # noqa: E402
    InactionPolicy,
    TestMapping,
    band_halfwidth,
    correction_psi,
    cost_from_test_size,
    implied_test_size_path,
    should_switch,
    solve_m_matrix,
    solve_m_scalar,
    test_size_from_cost,
)

__all__ = [
    "BernoulliModel",
    "FilterState",
    "InactionPolicy",
    "LinearGaussianModel",
    "PenaltySpec",
    "TestMapping",
    "band_halfwidth",
    "closed_form_P",
    "correction_psi",
    "constant_signal",
    "cost_from_test_size",
    "curvature_from_rho",
    "filter_step",
    "implied_test_size_path",
    "riccati_step",
    "should_switch",
    "sigma_of_t",
    "solve_m_matrix",
    "solve_m_scalar",
    "test_size_from_cost",
    "validate_model",
]
