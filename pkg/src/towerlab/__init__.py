"""towerlab: a numerical laboratory for tower-model dynamics and billiards.

Core pieces: symbolic two-sided towers with prescribed return-time tails,
collision maps for slowly mixing billiard tables, Monte Carlo estimators
for deviation probabilities and conditional-expectation norms, pointwise
maximal-inequality checks, rate-family fitting, and an exact enumeration
oracle that pins every stochastic estimator to ground truth on small
instances.
"""

from .billiards import (
    BilliardDomain,
    BilliardState,
    RateCatalogEntry,
    collide,
    cos_psi_observable,
    example_catalog,
    sample_liouville,
    semidispersing_domain,
    stadium_domain,
)
from .errors import TowerlabError
from .estimators import (
    BilliardSystem,
    CondExpResult,
    DecayEstimate,
    DualityResult,
    EstimatePoint,
    TowerSystem,
    birkhoff_sum,
    cond_exp_future_residual,
    cond_exp_past_norm,
    duality_check,
    estimate_correlation,
    estimate_ld,
    estimate_mld,
    stable_diameter_sum,
)
from .martingale import (
    MaxStats,
    bs_recursion_check,
    exp_moment,
    m_n,
    max_partial_sum_norm,
)
from .oracle import (
    CylinderWeight,
    enumerate_cylinders,
    exact_correlation,
    exact_duality,
    exact_ld,
    exact_mld,
)
from .ratefit import (
    RateModel,
    fit_polynomial_rate,
    fit_stretched_rate,
    fit_tau_prime,
    majorization_ratio,
    omega_prime,
    r_of_n,
    r_prime,
)
from .sampler import (
    Observable,
    TailSpec,
    canonical_observable,
    polynomial_tail_schema,
    sample_mu_delta,
    stretched_tail_schema,
)
from .tower import (
    ComponentAssignment,
    TowerPoint,
    TowerSchema,
    d_theta,
    gcd_decompose,
    h_n,
    make_tower_schema,
    separation_time,
    step,
)

__version__ = "0.1.0"
