"""Deep Q-learning over unfixing decisions."""

from .agent import Episode, RlHyper, choose_action, infer, macro_action, train_rl
from .mdp import (
    EXCLUDE,
    INSERT,
    Action,
    Partition,
    RlState,
    encode_state,
    mip_periods,
    partition_fix_set,
    reward,
    segment_widths,
    state_mip,
    transition,
)
from .qnet import Experience, QNetwork, ReplayBuffer, bellman_loss_and_grads, bellman_targets, learn_step

__all__ = [
    "EXCLUDE", "INSERT", "Action", "Episode", "Experience", "Partition", "QNetwork", "ReplayBuffer", "RlHyper",
    "RlState", "bellman_loss_and_grads", "bellman_targets", "choose_action", "encode_state", "infer",
    "learn_step", "macro_action", "mip_periods", "partition_fix_set", "reward", "segment_widths", "state_mip",
    "train_rl", "transition",
]
