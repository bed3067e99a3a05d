"""Sampling-based optimal control via entropic optimal transport."""

from .barycenter import (
    barycentric_update,
    barycentric_weights,
    generalized_update,
    matrix_exp_so3,
    matrix_exp_spd,
    matrix_log_so3,
    matrix_log_spd,
)
from .controllers import (
    CemConfig,
    MppiConfig,
    OtMpcConfig,
    ProposalConfig,
    cem_cycle,
    cem_update,
    gibbs_weights,
    mppi_cycle,
    mppi_update,
    otmpc_cycle,
    rollout,
    rollout_batch,
    sample_proposals,
)
from .envs import (
    BicycleEnv,
    DoubleIntegratorEnv,
    ObstacleField,
    TaskCostWeights,
    bicycle_step,
    bimodal_toy,
    generate_obstacle_field,
    success_check,
    task_cost,
)
from .scd import (
    ParticleEnsemble,
    ProposalBatch,
    ScdConfig,
    ScdTrace,
    epsilon_from_median_distance,
    objective_of,
    scd_run,
    scd_step,
)
from .transport import (
    Coupling,
    SinkhornConfig,
    build_cost_matrix,
    eot_objective,
    marginal_errors,
    sinkhorn,
)

__version__ = "0.1.0"
