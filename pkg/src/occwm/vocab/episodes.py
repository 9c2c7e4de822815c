"""Episode serialization to/from annotated token sequences.

Layout:
  <bos> [prompt text] { <occ> s_1..s_S </occ> [<act> a_x a_y </act>] }*
        [<ans> answer text] <eot_id>

World-model mode supervises the future-frame structure (opening specials,
scene ids, action ids, closing </act>, final <eot_id>); `</occ>` is emitted
structurally by generation and carries no target because its predecessor
position already holds the aligned scene-token target. Caption/QA mode
supervises everything after <ans>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import action_detokenize, action_tokenize
from .vocabulary import UnifiedVocabulary


@dataclass
class EpisodeSequence:
    tokens: np.ndarray
    scene_spans: list[tuple[int, int]]
    action_spans: list[tuple[int, int]]
    loss_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.loss_mask.shape != self.tokens.shape:
            raise ValueError("loss mask must align with the token sequence")
        last = 0
        for s, e in list(self.scene_spans) + list(self.action_spans):
            if not (0 <= s < e <= len(self.tokens)):
                raise ValueError(f"span ({s},{e}) out of bounds")
        ordered = sorted(list(self.scene_spans) + list(self.action_spans))
        for (s1, e1), (s2, e2) in zip(ordered, ordered[1:]):
            if s2 < e1:
                raise ValueError("spans overlap")

    def __len__(self):
        return len(self.tokens)

    def validate(self, vocab: UnifiedVocabulary) -> None:
        """Structural invariants that need the vocabulary."""
        occ, occ_end = vocab.special_id("<occ>"), vocab.special_id("</occ>")
        for s, e in self.scene_spans:
            if e - s != vocab.scene_len:
                raise ValueError(f"scene span ({s},{e}) is not {vocab.scene_len} long")
            if s == 0 or self.tokens[s - 1] != occ or e >= len(self.tokens) or self.tokens[e] != occ_end:
                raise ValueError("scene span must be bracketed by <occ>/</occ>")
            for vid in self.tokens[s:e]:
                if vid not in vocab.scene:
                    raise ValueError("scene span contains a non-scene token")

    def supervised_scene_spans(self) -> list[tuple[int, int]]:
        return [(s, e) for s, e in self.scene_spans if bool(self.loss_mask[s:e].all())]


def _format_waypoint_text(value: float) -> str:
    return f"{value:+.2f}"


def _waypoint_text_ids(waypoint, vocab: UnifiedVocabulary) -> list[int]:
    chars = _format_waypoint_text(float(waypoint[0])) + " " + _format_waypoint_text(float(waypoint[1]))
    ids = []
    for ch in chars:
        if ch == " ":
            continue
        ids.append(vocab.word_to_id[ch])
    return ids


def serialize_episode(
    frames,
    vocab: UnifiedVocabulary,
    prompt_text: str = "",
    target_text: str | None = None,
    mode: str = "world_model",
    history: int = 0,
    prompt_only: bool = False,
    action_as_text: bool = False,
) -> EpisodeSequence:
    """frames: list of (scene_code_array, waypoint-or-None).

    mode "world_model" supervises frames[history:]; "caption"/"qa" supervise
    the answer segment. prompt_only stops after the last frame (world model)
    or after <ans> (caption/qa), with an all-false mask, ready for generation.
    """
    if mode not in ("world_model", "caption", "qa"):
        raise ValueError(f"unknown mode {mode!r}")
    sp = vocab.special_id
    tokens: list[int] = [sp("<bos>")]
    mask: list[bool] = [False]
    scene_spans: list[tuple[int, int]] = []
    action_spans: list[tuple[int, int]] = []

    def emit(vid: int, supervised: bool):
        tokens.append(int(vid))
        mask.append(bool(supervised))

    for vid in vocab.text_tokenize(prompt_text):
        emit(vid, False)

    for f, (scene, waypoint) in enumerate(frames):
        future = mode == "world_model" and f >= history
        scene = np.asarray(scene, dtype=np.int64)
        if scene.shape != (vocab.scene_len,):
            raise ValueError(f"frame {f}: expected {vocab.scene_len} scene codes, got {scene.shape}")
        emit(sp("<occ>"), future)
        start = len(tokens)
        for code in scene:
            emit(vocab.scene_id(int(code)), future)
        scene_spans.append((start, len(tokens)))
        emit(sp("</occ>"), False)  # structurally forced at generation
        if waypoint is not None:
            emit(sp("<act>"), future)
            astart = len(tokens)
            if action_as_text:
                for vid in _waypoint_text_ids(waypoint, vocab):
                    emit(vid, future)
            else:
                ax, ay = action_tokenize(waypoint, vocab)
                emit(ax, future)
                emit(ay, future)
            action_spans.append((astart, len(tokens)))
            emit(sp("</act>"), future)

    if mode in ("caption", "qa"):
        emit(sp("<ans>"), False)
        if not prompt_only:
            if target_text is None:
                raise ValueError(f"{mode} mode needs target_text (or prompt_only)")
            for vid in vocab.text_tokenize(target_text):
                emit(vid, True)
            emit(sp("<eot_id>"), True)
    elif not prompt_only:
        emit(sp("<eot_id>"), True)

    ep = EpisodeSequence(
        tokens=np.array(tokens, dtype=np.int64),
        scene_spans=scene_spans,
        action_spans=action_spans,
        loss_mask=np.array(mask, dtype=bool),
        meta={
            "mode": mode,
            "history": history,
            "prompt_only": prompt_only,
            "action_as_text": action_as_text,
            "prompt_text": prompt_text,
        },
    )
    ep.validate(vocab)
    return ep


@dataclass
class ParsedGeneration:
    scenes: list[np.ndarray]
    trajectory: list[tuple[float, float]]
    answer: str
    diagnostics: list[str]

    @property
    def well_formed(self) -> bool:
        return not self.diagnostics


def _parse_text_waypoints(ids, vocab) -> tuple[float, float]:
    chars = "".join(vocab.words[i] for i in ids)
    splits = [j for j, ch in enumerate(chars) if ch in "+-" and j > 0]
    if len(splits) != 1:
        raise ValueError(f"cannot split waypoint text {chars!r} into two numbers")
    return (float(chars[: splits[0]]), float(chars[splits[0] :]))


def parse_generated(tokens, vocab: UnifiedVocabulary, action_as_text: bool = False) -> ParsedGeneration:
    """Tolerant scan for <occ>/<act>/<ans> blocks; malformed blocks are
    reported in diagnostics, never raised, and never stall the scan."""
    tokens = [int(t) for t in tokens]
    sp = vocab.special_id
    occ, occ_end = sp("<occ>"), sp("</occ>")
    act, act_end = sp("<act>"), sp("</act>")
    ans, eot = sp("<ans>"), sp("<eot_id>")
    s_len = vocab.scene_len

    scenes: list[np.ndarray] = []
    trajectory: list[tuple[float, float]] = []
    answer_words: list[str] = []
    diags: list[str] = []

    i = 0
    n = len(tokens)
    while i < n:
        t = tokens[i]
        if t == occ:
            j = i + 1
            block = []
            while j < n and tokens[j] in vocab.scene:
                block.append(vocab.scene_code(tokens[j]))
                j += 1
            closed = j < n and tokens[j] == occ_end
            if len(block) == s_len and closed:
                scenes.append(np.array(block, dtype=np.int64))
                i = j + 1
            else:
                if len(block) != s_len:
                    diags.append(f"truncated scene block at {i}: {len(block)}/{s_len} scene ids")
                else:
                    diags.append(f"unterminated scene block at {i}")
                i = j + (1 if closed else 0)
        elif t == act:
            j = i + 1
            block = []
            while j < n and tokens[j] != act_end and (
                tokens[j] in vocab.action or (action_as_text and tokens[j] in vocab.text)
            ):
                block.append(tokens[j])
                j += 1
            closed = j < n and tokens[j] == act_end
            if not closed:
                diags.append(f"unterminated action block at {i}")
                i = j
                continue
            try:
                if action_as_text:
                    trajectory.append(_parse_text_waypoints(block, vocab))
                else:
                    if len(block) != 2:
                        raise ValueError(f"{len(block)} ids, expected 2")
                    trajectory.append(action_detokenize(block, vocab))
            except ValueError as exc:
                diags.append(f"malformed action block at {i}: {exc}")
            i = j + 1
        elif t == ans:
            j = i + 1
            while j < n and tokens[j] != eot:
                if tokens[j] in vocab.text:
                    answer_words.append(vocab.words[tokens[j]])
                else:
                    diags.append(f"non-text token {tokens[j]} in answer at {j}")
                j += 1
            i = j
        else:
            i += 1

    return ParsedGeneration(scenes, trajectory, " ".join(answer_words), diags)


def episode_to_json(ep: EpisodeSequence) -> dict:
    return {
        "tokens": ep.tokens.tolist(),
        "scene_spans": [list(s) for s in ep.scene_spans],
        "action_spans": [list(s) for s in ep.action_spans],
        "loss_mask": ep.loss_mask.astype(int).tolist(),
        "meta": ep.meta,
    }


def episode_from_json(blob: dict) -> EpisodeSequence:
    return EpisodeSequence(
        tokens=np.array(blob["tokens"], dtype=np.int64),
        scene_spans=[tuple(s) for s in blob["scene_spans"]],
        action_spans=[tuple(s) for s in blob["action_spans"]],
        loss_mask=np.array(blob["loss_mask"], dtype=bool),
        meta=blob.get("meta", {}),
    )
