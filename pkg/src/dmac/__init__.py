"""Divergence-regularized cooperative multi-agent learning on finite games."""

from .errors import ConvergenceError, GameFileError, InvalidArgument, ValidationError
from .game import (
    JointActionIndex,
    MarkovGame,
    decode_joint_action,
    encode_joint_action,
    generate_random_game,
    load_game,
    save_game,
    step,
)
from .policy import (
    AgentPolicy,
    JointPolicy,
    agent_probs,
    joint_kl,
    joint_prob,
    load_policy,
    mix_probability,
    sample_joint,
    save_policy,
    soft_update_params,
)

__version__ = "0.1.0"
