from .baselines import GreedySce, RandomPolicy, baseline_policy
from .dsac import DsacAgent, DsacConfig, ReplayBuffer

__all__ = ["DsacAgent", "DsacConfig", "ReplayBuffer", "GreedySce", "RandomPolicy", "baseline_policy"]
