from .bundle import ModelBundle, OracleBundle
from .captions import gen_caption
from .evals import EvalReport, eval_forecast, eval_plan, eval_qa, normalize_answer
from .pipeline import (
    Datasets,
    Pipeline,
    StageError,
    default_config,
    merge_config,
    set_by_path,
    tokenizer_config,
    world_config,
)
from .qa import CATEGORIES, QAItem, answer_rule, gen_qa
from .synth import (
    ObjectRecord,
    PlacementError,
    Scenario,
    SynthWorldConfig,
    column_occupied,
    gen_scenario,
)

__all__ = [
    "ModelBundle",
    "OracleBundle",
    "gen_caption",
    "EvalReport",
    "eval_forecast",
    "eval_plan",
    "eval_qa",
    "normalize_answer",
    "Datasets",
    "Pipeline",
    "StageError",
    "default_config",
    "merge_config",
    "set_by_path",
    "tokenizer_config",
    "world_config",
    "CATEGORIES",
    "QAItem",
    "answer_rule",
    "gen_qa",
    "ObjectRecord",
    "PlacementError",
    "Scenario",
    "SynthWorldConfig",
    "column_occupied",
    "gen_scenario",
]
