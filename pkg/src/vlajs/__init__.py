"""Guided on-policy reinforcement learning with sparse, transient,
directional teacher hints.

Public surface: task construction and environment stepping (envs), Gaussian
MLP policy with exact manual gradients and binary checkpoints (policy),
clipped-surrogate updates with generalized advantage estimation (ppo),
guidance scheduling, query placement and auxiliary losses (guidance),
scripted and remote teachers plus noise wrappers (teachers), training
orchestration and reporting metrics (harness), INI configs (config), and the
command line (cli).
"""

from .envs import Env, TaskSpec, VecEnv, make_long_horizon, make_task
from .geometry import ActionDelta, Quaternion, discretize_delta, slerp
from .guidance import (GuidanceConfig, ScheduleState, directional_loss,
                       mse_matching_loss, place_queries)
from .harness import (ExperimentConfig, MetricsRecord, auc_success,
                      bootstrap_ci, evaluate, read_metrics, run_single,
                      run_training, sr_at_tstar)
from .policy import (PolicyParams, forward, init_policy, load_checkpoint,
                     save_checkpoint)
from .ppo import PPOConfig, RolloutBatch, compute_gae, ppo_update
from .teachers import PRESETS, TeacherSpec, make_teacher

__version__ = "0.1.0"

__all__ = [
    "ActionDelta", "Env", "ExperimentConfig", "GuidanceConfig",
    "MetricsRecord", "PPOConfig", "PRESETS", "PolicyParams", "Quaternion",
    "RolloutBatch", "ScheduleState", "TaskSpec", "TeacherSpec", "VecEnv",
    "auc_success", "bootstrap_ci", "compute_gae", "directional_loss",
    "discretize_delta", "evaluate", "forward", "init_policy",
    "load_checkpoint", "make_long_horizon", "make_task", "make_teacher",
    "mse_matching_loss", "place_queries", "ppo_update", "read_metrics",
    "run_single", "run_training", "save_checkpoint", "slerp", "sr_at_tstar",
    "__version__",
]
