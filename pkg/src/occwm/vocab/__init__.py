from .actions import ActionBinner, action_detokenize, action_tokenize, fit_action_bins
from .episodes import (
    EpisodeSequence,
    ParsedGeneration,
    episode_from_json,
    episode_to_json,
    parse_generated,
    serialize_episode,
)
from .vocabulary import (
    CORE_SPECIALS,
    GUARANTEED_TEXT,
    UNK,
    Segment,
    UnifiedVocabulary,
    build_vocabulary,
)

__all__ = [
    "ActionBinner",
    "action_detokenize",
    "action_tokenize",
    "fit_action_bins",
    "EpisodeSequence",
    "ParsedGeneration",
    "episode_from_json",
    "episode_to_json",
    "parse_generated",
    "serialize_episode",
    "CORE_SPECIALS",
    "GUARANTEED_TEXT",
    "UNK",
    "Segment",
    "UnifiedVocabulary",
    "build_vocabulary",
]
