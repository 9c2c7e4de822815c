"""Pretraining objectives.

World-model objective: teacher-forced CE over the supervised future-frame
positions. Supervised scene spans receive the query tokens as inputs and
their true scene ids as position-aligned targets, so the input distribution
at those positions matches generation exactly; every other supervised token
is predicted from its predecessor position (ordinary next-token shift).
Caption objective: next-token CE on the answer segment after <ans>.
"""

from __future__ import annotations

import numpy as np

from ..nn import Tensor, add, cross_entropy, gather_rows, mul
from ..vocab import EpisodeSequence, UnifiedVocabulary
from .model import WorldModel


def episode_training_arrays(ep: EpisodeSequence, vocab: UnifiedVocabulary):
    """(inputs, aligned_idx, aligned_targets, shifted_idx, shifted_targets).

    aligned_idx are positions whose own logits are supervised (scene queries);
    shifted_idx are predecessor positions supervised with the next token.
    """
    tokens = ep.tokens
    inputs = tokens.copy()
    sup_spans = ep.supervised_scene_spans()
    queries = np.array(vocab.query_ids(), dtype=np.int64)
    in_sup_span = np.zeros(len(tokens), dtype=bool)
    for s, e in sup_spans:
        if e - s != len(queries):
            raise ValueError("supervised scene span length mismatch")
        inputs[s:e] = queries
        in_sup_span[s:e] = True
        assert np.array_equal(inputs[s:e], queries)  # generation-time condition

    aligned_idx = np.nonzero(in_sup_span)[0]
    aligned_targets = tokens[aligned_idx]

    shifted_sources = np.nonzero(ep.loss_mask & ~in_sup_span)[0]
    if shifted_sources.size and shifted_sources[0] == 0:
        raise ValueError("position 0 cannot be a next-token target")
    shifted_idx = shifted_sources - 1
    shifted_targets = tokens[shifted_sources]
    return inputs, aligned_idx, aligned_targets, shifted_idx, shifted_targets


def episode_loss(model: WorldModel, ep: EpisodeSequence, vocab: UnifiedVocabulary,
                 adapters: dict | None = None) -> Tensor:
    inputs, a_idx, a_tgt, s_idx, s_tgt = episode_training_arrays(ep, vocab)
    n_a, n_s = a_idx.size, s_idx.size
    if n_a + n_s == 0:
        raise ValueError("episode has an empty supervision mask")
    logits = model.forward(inputs, ep.scene_spans, adapters)
    parts = []
    if n_a:
        parts.append((cross_entropy(gather_rows(logits, a_idx), a_tgt), n_a))
    if n_s:
        parts.append((cross_entropy(gather_rows(logits, s_idx), s_tgt), n_s))
    total = n_a + n_s
    out = None
    for ce, n in parts:
        term = mul(ce, n / total)
        out = term if out is None else add(out, term)
    return out


def _batch_loss(model, batch, vocab, adapters=None) -> Tensor:
    if not batch:
        raise ValueError("empty batch")
    total = None
    for ep in batch:
        loss = episode_loss(model, ep, vocab, adapters)
        total = loss if total is None else add(total, loss)
    return mul(total, 1.0 / len(batch))


def wm_objective_loss(model: WorldModel, batch: list[EpisodeSequence], vocab: UnifiedVocabulary,
                      adapters: dict | None = None) -> Tensor:
    for ep in batch:
        if ep.meta.get("mode") != "world_model":
            raise ValueError("world-model objective expects world_model-mode episodes")
    return _batch_loss(model, batch, vocab, adapters)


def caption_objective_loss(model: WorldModel, batch: list[EpisodeSequence], vocab: UnifiedVocabulary,
                           adapters: dict | None = None) -> Tensor:
    for ep in batch:
        if ep.meta.get("mode") not in ("caption", "qa"):
            raise ValueError("caption objective expects caption/qa-mode episodes")
        if ep.supervised_scene_spans():
            raise ValueError("caption episodes must not supervise scene spans")
    return _batch_loss(model, batch, vocab, adapters)


def next_scene_token_accuracy(model: WorldModel, episodes: list[EpisodeSequence],
                              vocab: UnifiedVocabulary, adapters: dict | None = None) -> float:
    """Teacher-forced accuracy at supervised scene-span positions."""
    from ..nn import no_grad

    hit = total = 0
    with no_grad():
        for ep in episodes:
            inputs, a_idx, a_tgt, _, _ = episode_training_arrays(ep, vocab)
            if a_idx.size == 0:
                continue
            logits = model.forward(inputs, ep.scene_spans, adapters).data
            seg = vocab.scene
            block = logits[a_idx, seg.start : seg.stop]
            pred = block.argmax(axis=1) + seg.start
            hit += int((pred == a_tgt).sum())
            total += a_idx.size
    return hit / total if total else 0.0
