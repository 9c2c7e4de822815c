from .config import TokenizerConfig
from .losses import lovasz_grad, lovasz_softmax, tokenizer_loss
from .model import SceneTokens, SceneTokenizer, hard_decode, quantize_indices
from .train import (
    TokenizerTrainConfig,
    TrainingDiverged,
    codebook_usage,
    reinit_dead_codes,
    train_tokenizer,
)
from .tokenfile import SctFormatError, read_sct, sct_bytes, sct_decode, write_sct

__all__ = [
    "TokenizerConfig",
    "lovasz_grad",
    "lovasz_softmax",
    "tokenizer_loss",
    "SceneTokens",
    "SceneTokenizer",
    "hard_decode",
    "quantize_indices",
    "TokenizerTrainConfig",
    "TrainingDiverged",
    "codebook_usage",
    "reinit_dead_codes",
    "train_tokenizer",
    "SctFormatError",
    "read_sct",
    "sct_decode",
    "sct_bytes",
    "write_sct",
]
