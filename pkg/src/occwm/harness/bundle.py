"""Model bundle: everything needed to run generation-based evaluations.

A bundle pairs the frozen tokenizer with episode construction and a
scene-prediction strategy. The trained bundle wraps the world model; the
oracle bundle replays ground-truth tokens, pinning the evaluation upper
bound to tokenizer reconstruction quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..occ import OccupancyGrid
from ..tok import SceneTokenizer, SceneTokens
from ..vocab import EpisodeSequence, UnifiedVocabulary, parse_generated, serialize_episode
from ..wm import WorldModel, generate
from .synth import Scenario


@dataclass
class ModelBundle:
    tokenizer: SceneTokenizer
    vocab: UnifiedVocabulary
    model: WorldModel | None = None
    adapters: dict | None = None
    scene_token_cache: dict = field(default_factory=dict)

    @property
    def action_as_text(self) -> bool:
        return bool(self.model is not None and not self.model.cfg.action_tokenization)

    def scene_codes(self, grid: OccupancyGrid) -> np.ndarray:
        key = grid.labels.tobytes()
        if key not in self.scene_token_cache:
            self.scene_token_cache[key] = self.tokenizer.encode_tokens(grid).indices
        return self.scene_token_cache[key]

    def history_frames(self, scenario: Scenario, history: int):
        disp = scenario.ego_displacements
        return [(self.scene_codes(scenario.grids[t]), disp[t]) for t in range(history)]

    def forecast_prompt(self, scenario: Scenario, history: int) -> EpisodeSequence:
        return serialize_episode(
            self.history_frames(scenario, history),
            self.vocab,
            mode="world_model",
            history=history,
            prompt_only=True,
            action_as_text=self.action_as_text,
        )

    def qa_prompt(self, grid: OccupancyGrid, question: str) -> EpisodeSequence:
        return serialize_episode(
            [(self.scene_codes(grid), None)],
            self.vocab,
            prompt_text=question,
            mode="qa",
            prompt_only=True,
        )

    def complete(self, prompt: EpisodeSequence, suppress_scene: bool = False,
                 rng: np.random.Generator | None = None) -> EpisodeSequence:
        if self.model is None:
            raise ValueError("bundle has no world model")
        return generate(self.model, self.vocab, prompt, adapters=self.adapters,
                        rng=rng, suppress_scene=suppress_scene)

    def decode_scene(self, codes: np.ndarray, voxel_size: float = 1.0) -> OccupancyGrid:
        return self.tokenizer.decode_grid(SceneTokens(codes, self.tokenizer.cfg.k), voxel_size)


@dataclass
class OracleBundle:
    """Replays ground-truth scene tokens and ego displacements verbatim."""

    tokenizer: SceneTokenizer
    vocab: UnifiedVocabulary
    scenario_lookup: dict = field(default_factory=dict)

    def register(self, scenario: Scenario) -> None:
        self.scenario_lookup[id(scenario)] = scenario

    def scene_codes(self, grid: OccupancyGrid) -> np.ndarray:
        return self.tokenizer.encode_tokens(grid).indices

    def oracle_generation(self, scenario: Scenario, history: int, horizon: int) -> EpisodeSequence:
        """The sequence a perfect model would emit: GT scenes + GT actions."""
        disp = scenario.ego_displacements
        frames = [
            (self.scene_codes(scenario.grids[t]), disp[t] if t < len(disp) else None)
            for t in range(history + horizon)
        ]
        return serialize_episode(frames, self.vocab, mode="world_model", history=history)

    def decode_scene(self, codes: np.ndarray, voxel_size: float = 1.0) -> OccupancyGrid:
        return self.tokenizer.decode_grid(SceneTokens(codes, self.tokenizer.cfg.k), voxel_size)
