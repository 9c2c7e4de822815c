"""Next-token / next-scene decoding.

The loop branches on the last token: <occ> triggers one-shot scene
generation through the query tokens, anything else is ordinary next-token
prediction. With constrained decoding on, opened action blocks are forced
well-formed: two axis-ordered action ids then </act>. Query/pad/bos ids are
never sampled directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import no_grad
from ..vocab import EpisodeSequence, UnifiedVocabulary
from .config import WorldModelConfig
from .model import WorldModel


@dataclass
class GenerationState:
    tokens: list[int]
    scene_spans: list[tuple[int, int]]
    action_spans: list[tuple[int, int]] = field(default_factory=list)
    truncated: bool = False
    trace: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)


def _never_sampled(vocab: UnifiedVocabulary) -> np.ndarray:
    ids = [vocab.special_id("<pad>"), vocab.special_id("<bos>")]
    ids.extend(vocab.query_ids())
    return np.array(ids, dtype=np.int64)


def _allowed_for_state(state: GenerationState, vocab: UnifiedVocabulary, cfg: WorldModelConfig,
                       suppress_scene: bool) -> np.ndarray | None:
    """Boolean keep-mask over the vocabulary for the next sampled token, or
    None when only the never-sampled hygiene mask applies."""
    if not cfg.constrained_decoding or not cfg.action_tokenization:
        return None
    sp = vocab.special_id
    act, act_end = sp("<act>"), sp("</act>")
    n = vocab.binner.num_bins
    # how deep inside an open action block are we?
    tail = state.tokens
    if tail and tail[-1] == act:
        keep = np.zeros(vocab.total, dtype=bool)
        keep[vocab.action.start : vocab.action.start + n] = True  # x axis
        return keep
    if len(tail) >= 2 and tail[-2] == act and tail[-1] in vocab.action:
        keep = np.zeros(vocab.total, dtype=bool)
        keep[vocab.action.start + n : vocab.action.stop] = True  # y axis
        return keep
    if len(tail) >= 3 and tail[-3] == act and tail[-2] in vocab.action and tail[-1] in vocab.action:
        keep = np.zeros(vocab.total, dtype=bool)
        keep[act_end] = True
        return keep
    return None


def _pick(logits: np.ndarray, cfg: WorldModelConfig, rng: np.random.Generator | None) -> int:
    if cfg.sampling == "greedy" or cfg.temperature <= 1e-6:
        return int(np.argmax(logits))
    if rng is None:
        raise ValueError("temperature sampling needs an rng")
    scaled = (logits - logits.max()) / cfg.temperature
    p = np.exp(scaled.astype(np.float64))
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def next_token(
    state: GenerationState,
    model: WorldModel,
    vocab: UnifiedVocabulary,
    adapters: dict | None = None,
    rng: np.random.Generator | None = None,
    suppress_scene: bool = False,
) -> int:
    """Sample/argmax the next id from the last-position logits and append."""
    if not state.tokens:
        raise ValueError("cannot extend an empty sequence")
    with no_grad():
        logits = model.forward(state.tokens, state.scene_spans, adapters).data[-1].copy()
    logits[_never_sampled(vocab)] = -np.inf
    if suppress_scene:
        logits[vocab.special_id("<occ>")] = -np.inf
    keep = _allowed_for_state(state, vocab, model.cfg, suppress_scene)
    if keep is not None:
        logits[~keep] = -np.inf
    tok = _pick(logits, model.cfg, rng)
    # bookkeeping: close of a constrained action block records its span
    if keep is not None and tok == vocab.special_id("</act>"):
        state.action_spans.append((len(state.tokens) - 2, len(state.tokens)))
    state.tokens.append(tok)
    state.trace.append({"kind": "token", "pos": len(state.tokens) - 1, "id": tok,
                        "name": vocab.describe(tok)})
    return tok


def next_scene(
    state: GenerationState,
    model: WorldModel,
    vocab: UnifiedVocabulary,
    adapters: dict | None = None,
) -> list[int]:
    """One forward pass over appended query tokens; the S query positions are
    replaced by the argmax over the scene segment, then </occ> is appended."""
    if not state.tokens or state.tokens[-1] != vocab.special_id("<occ>"):
        raise ValueError("next_scene requires the sequence to end with <occ>")
    s_len = vocab.scene_len
    start = len(state.tokens)
    state.tokens.extend(vocab.query_ids())
    span = (start, start + s_len)
    state.scene_spans.append(span)
    with no_grad():
        logits = model.forward(state.tokens, state.scene_spans, adapters).data
    seg = vocab.scene
    block = logits[start : start + s_len, seg.start : seg.stop]
    picked = (np.argmax(block, axis=1) + seg.start).astype(np.int64)
    state.tokens[start : start + s_len] = [int(x) for x in picked]
    state.tokens.append(vocab.special_id("</occ>"))
    state.trace.append({"kind": "scene", "span": list(span)})
    return [int(x) for x in picked]


def generate(
    model: WorldModel,
    vocab: UnifiedVocabulary,
    prompt: EpisodeSequence,
    adapters: dict | None = None,
    rng: np.random.Generator | None = None,
    suppress_scene: bool = False,
    max_len: int | None = None,
) -> EpisodeSequence:
    """Autoregressive completion of a prompt episode.

    Stops at <eot_id> or the length budget; a scene branch that cannot fit
    S queries plus </occ> inside the budget marks the output truncated.
    """
    budget = min(model.cfg.max_len, max_len or model.cfg.max_len)
    if len(prompt) > budget:
        raise ValueError(f"prompt length {len(prompt)} exceeds budget {budget}")
    state = GenerationState(
        tokens=[int(t) for t in prompt.tokens],
        scene_spans=[tuple(s) for s in prompt.scene_spans],
        action_spans=[tuple(s) for s in prompt.action_spans],
    )
    eot = vocab.special_id("<eot_id>")
    occ = vocab.special_id("<occ>")

    while state.tokens[-1] != eot and len(state) < budget:
        if state.tokens[-1] == occ:
            if len(state) + vocab.scene_len + 1 > budget:
                state.truncated = True
                break
            next_scene(state, model, vocab, adapters)
        else:
            next_token(state, model, vocab, adapters, rng, suppress_scene)
    if state.tokens[-1] != eot and not state.truncated and len(state) >= budget:
        state.truncated = True

    return EpisodeSequence(
        tokens=np.array(state.tokens, dtype=np.int64),
        scene_spans=state.scene_spans,
        action_spans=state.action_spans,
        loss_mask=np.zeros(len(state.tokens), dtype=bool),
        meta={
            "generated_from": len(prompt),
            "truncated": state.truncated,
            "trace": state.trace,
            "mode": prompt.meta.get("mode", "world_model"),
            "action_as_text": prompt.meta.get("action_as_text", False),
        },
    )
