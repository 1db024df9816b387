"""deep-limit-lab: residual Euler flows, their continuous-depth limit, and
the coupled stochastic-gradient dynamics, with numerical rate verification."""

__version__ = "0.1.0"

from .dynamics import (
    VectorFieldSpec,
    WeightVector,
    DiscreteTrajectory,
    ContinuousTrajectory,
    TrajectoryOverflowError,
    eval_field,
    jacobians,
    euler_forward,
    ode_solve,
    discrepancy_study,
    grad_discrepancy_study,
)
from .risk import (
    TruncationSpec,
    RegularizerSpec,
    RiskConfig,
    trunc,
    regularizer,
    risk,
    grad_risk,
    confinement_probe,
)
from .datasets import (
    LabeledDataset,
    StarlikeSpec,
    gen_starlike,
    gen_concentric,
    gen_regression_oracle,
)
from .sgd_sde import (
    NoiseModel,
    InitDistribution,
    SDEPath,
    euler_maruyama,
    coupled_run,
    mc_statistics,
)
from .fokker_planck import (
    Grid,
    PotentialField,
    DensityField,
    fp_solve,
    stationary_density,
    relaxation_rate,
    tail_mass,
    density_gap_study,
)
from .rates import fit_slope
