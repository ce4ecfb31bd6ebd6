"""Goal-oriented retrieval dialog on a synthetic glyph world."""

from .agent import AgentConfig, DialogState, build_params
from .params import ParamStore
from .rng import Rng
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig
from .world import World, WorldConfig, generate_world

__all__ = [
    "AgentConfig",
    "DialogState",
    "ParamStore",
    "Rng",
    "Tensor",
    "TrainConfig",
    "World",
    "WorldConfig",
    "backward",
    "build_params",
    "generate_world",
    "no_grad",
]
