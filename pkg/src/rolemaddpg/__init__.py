"""Role-based multi-agent DDPG for multi-target pursuit-evasion with scouts."""

from .env import Role, WorldConfig, reset, step, observe
from .rewards import RewardConfig, compute_all_rewards
from .maddpg import TrainConfig, train, evaluate
from .config import RunConfig

__version__ = "0.1.0"
