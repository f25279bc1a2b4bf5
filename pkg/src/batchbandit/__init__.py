"""Bayesian batch bandit simulator.

Four adaptive sampling rules (NB-TS, WB-TS, NB-TTTS, WB-TTTS) plus a uniform
baseline, built on per-batch summary statistics, Monte-Carlo optimal
probabilities, posterior reshaping, and FPR-calibrated winner decisions.
"""

from .allocation import (
    Allocation,
    DecisionRule,
    OptimalProbs,
    apply_floor,
    decide_winner,
    estimate_optimal_probs,
    fpr_for_threshold,
    threshold_for_fpr,
    ts_target,
    ttts_target,
)
from .datasets import (
    DatasetSpec,
    ExperimentSpec,
    builtin_dataset,
    dataset_names,
    generate_experiment,
    load_dataset,
    save_dataset,
)
from .engine import (
    DecisionRecord,
    ExperimentConfig,
    RunTrajectory,
    SAMPLING_RULES,
    run_experiment,
    run_monte_carlo,
    substream_seed,
)
from .environment import (
    ArmSpec,
    BatchSchedule,
    EnvironmentSpec,
    ReplayLog,
    check_variance_convergence,
    draw_batch,
    load_replay_log,
    mean_at_batch,
    replay_batch,
    write_replay_log,
)
from .errors import (
    BanditError,
    InsufficientDataError,
    InvalidConfigError,
    InvalidInputError,
    ReplayCoverageError,
    UninformedPosteriorError,
)
from .evaluation import (
    BiasDemoResult,
    CalibrationResult,
    CampaignResult,
    ConvergenceResult,
    bias_demo,
    calibrate_neutral_eta,
    compute_fpr,
    compute_power,
    compute_precision,
    compute_regret,
    convergence_study,
    mean_regret,
    run_campaign,
    wilson_interval,
)
from .posterior import (
    BatchSummary,
    GaussianPosterior,
    PosteriorSet,
    estimate_sample_variance,
    nb_point_estimate,
    nb_update,
    reshape_posterior,
    studentized_z,
    wb_point_estimate,
    wb_update,
)

__version__ = "0.1.0"
