from .config import WorldModelConfig
from .generate import GenerationState, generate, next_scene, next_token
from .mask import MixedMaskSpec, build_mixed_mask
from .model import WorldModel
from .objectives import (
    caption_objective_loss,
    episode_loss,
    episode_training_arrays,
    next_scene_token_accuracy,
    wm_objective_loss,
)
from .training import (
    PretrainConfig,
    PretrainDiverged,
    TuneConfig,
    instruction_tune,
    load_adapters,
    load_pretrain_checkpoint,
    pretrain,
    save_adapters,
    save_pretrain_checkpoint,
)

__all__ = [
    "WorldModelConfig",
    "GenerationState",
    "generate",
    "next_scene",
    "next_token",
    "MixedMaskSpec",
    "build_mixed_mask",
    "WorldModel",
    "caption_objective_loss",
    "episode_loss",
    "episode_training_arrays",
    "next_scene_token_accuracy",
    "wm_objective_loss",
    "PretrainConfig",
    "PretrainDiverged",
    "TuneConfig",
    "instruction_tune",
    "load_adapters",
    "load_pretrain_checkpoint",
    "pretrain",
    "save_adapters",
    "save_pretrain_checkpoint",
]
