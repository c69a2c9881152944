"""Desk-scale TD-learning testbed: chain MDPs, critic ensembles and training runs."""

from .env import ChainEnv, ChainMDPSpec, RewardNoise, make_chain_env, policy_value, value_iteration
from .experiment import AgentConfig, ExperimentConfig, TrainRunLog, apply_overrides, load_config, run_experiment
from .network import CriticEnsemble
from .train import LOSS_KINDS, FrozenWeights, TrainBatch, ensemble_loss, td_error, td_target, train_step

__all__ = [
    "LOSS_KINDS",
    "AgentConfig",
    "ChainEnv",
    "ChainMDPSpec",
    "CriticEnsemble",
    "ExperimentConfig",
    "FrozenWeights",
    "RewardNoise",
    "TrainBatch",
    "TrainRunLog",
    "apply_overrides",
    "ensemble_loss",
    "load_config",
    "make_chain_env",
    "policy_value",
    "run_experiment",
    "td_error",
    "td_target",
    "train_step",
    "value_iteration",
]
