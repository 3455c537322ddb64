"""Recurrent PPO with auxiliary internal-state and trajectory-prediction tasks."""

from .agent import Agent, CheckpointMissingError, TrainConfig, build_noego_predictor, load_noego_predictor
from .evaluate import TestRecord, run_test_episode, run_test_episodes, test_env_config
from .policy import (InputLayout, Manipulation, PolicyNet, ValueNet, Variant, VariantConfig,
                     build_policy_input, manipulate_beliefs)
from .ppo import clip_contribution, compute_gae, normalize_advantages, ppo_loss
from .supervised import LabelledWindows, collect_labelled_windows, isi_accuracy, train_isi
from .trainer import ReplayBuffer, Trainer

__all__ = [
    "Agent", "CheckpointMissingError", "InputLayout", "LabelledWindows", "Manipulation", "PolicyNet", "ReplayBuffer",
    "TestRecord", "TrainConfig", "Trainer", "ValueNet", "Variant", "VariantConfig",
    "build_noego_predictor", "build_policy_input", "clip_contribution", "collect_labelled_windows",
    "compute_gae", "isi_accuracy",
    "load_noego_predictor", "manipulate_beliefs", "normalize_advantages", "ppo_loss",
    "run_test_episode", "run_test_episodes", "test_env_config", "train_isi",
]
