"""Simulation, planning, identification and regret evaluation for rebounding bandits."""
from .dynamics import (
    REFERENCE_ARMS,
    REFERENCE_SIGMA_Z,
    ArmParams,
    EnvConfig,
    EnvState,
    ParameterError,
    PullHistory,
    ReboundingEnv,
    cumulative_expected_reward,
    env_step,
    expected_reward,
    expected_rewards,
    mdp_reward,
    reference_config,
    satiation_expected,
    state_bound,
)
from .eep import EepConfig, EepRun, HorizonTooShortError, eep_run, explore_schedule, exploration_length
from .harness import ExperimentSpec, run_experiment, slope_fit
from .planning import (
    FeasibilityError,
    PlannerCapExceeded,
    PlanRequest,
    PlanResult,
    greedy_policy,
    greedy_step,
    lookahead_gap_bound,
    lookahead_plan,
    lookahead_policy,
    max_kcut_partition,
    objective_bilinear,
    objective_linearized,
)
from .regret import RegretReport, episode_oracle, lookahead_regret
from .sysid import (
    ArmEstimate,
    EstimatedModel,
    Trajectory,
    confidence_radii,
    estimate_arm,
    estimate_arm_multi,
    multi_traj_estimate,
    ols_affine_fit,
    recover_params,
)

__version__ = "0.1.0"
