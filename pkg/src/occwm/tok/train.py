"""Tokenizer training: AdamW on the five-term objective with the
straight-through bridge feeding decoder gradients back to the encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..nn import AdamW, Tensor, add, mul, ste_quantize_bridge
from ..occ import OccupancyGrid, sparsify
from .config import TokenizerConfig
from .losses import tokenizer_loss
from .model import SceneTokenizer, quantize_indices


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, components: dict):
        super().__init__(f"non-finite tokenizer loss at step {step}: {components}")
        self.step = step
        self.components = components


@dataclass
class TokenizerTrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    codebook_lr_mult: float = 1.0  # let codes track latents faster than the nets
    batch_size: int = 4
    weight_decay: float = 0.0
    seed: int = 0
    # quantization-free fraction: the nets first learn a discriminative latent
    # space (zq = z, embedding term identically 0), then the codebook is
    # seeded from the live latents and Eq.-2 training continues unchanged
    warmup_frac: float = 0.4
    reinit_interval: int = 250  # dead-code sweep cadence, 0 disables
    reinit_stop_frac: float = 0.85  # no sweeps in the final stretch
    log_every: int = 25


def codebook_usage(token_batches, k: int) -> tuple[np.ndarray, float]:
    """Per-entry counts and exp(entropy) of the empirical code distribution."""
    counts = np.zeros(k, dtype=np.int64)
    for batch in token_batches:
        idx = batch.indices if hasattr(batch, "indices") else np.asarray(batch)
        counts += np.bincount(idx.reshape(-1), minlength=k)
    total = counts.sum()
    if total == 0:
        return counts, 1.0
    p = counts / total
    nz = p[p > 0]
    return counts, float(np.exp(-(nz * np.log(nz)).sum()))


def reinit_dead_codes(
    codebook: Tensor,
    usage: np.ndarray,
    encoder_outputs: np.ndarray,
    rng: np.random.Generator,
    noise: float = 1e-4,
) -> int:
    """Reassign zero-usage entries to sampled recent encoder outputs plus a
    little noise. Returns the number of entries replaced."""
    dead = np.nonzero(usage == 0)[0]
    if dead.size == 0 or encoder_outputs.shape[0] == 0:
        return 0
    picks = rng.integers(0, encoder_outputs.shape[0], size=dead.size)
    fresh = encoder_outputs[picks] + (rng.standard_normal((dead.size, codebook.shape[1])) * noise)
    new = codebook.data.copy()
    new[dead] = fresh.astype(np.float32)
    codebook.data = new
    return int(dead.size)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def _farthest_point_sample(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy max-min-distance subset; covers the latent space instead of
    re-drawing the dominant (mostly empty-scene) cluster over and over."""
    n = pool.shape[0]
    if n <= k:
        reps = int(np.ceil(k / n))
        return np.tile(pool, (reps, 1))[:k]
    chosen = np.empty((k,), dtype=np.int64)
    chosen[0] = int(rng.integers(0, n))
    dist = np.sum((pool - pool[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        chosen[i] = int(np.argmax(dist))
        cand = np.sum((pool - pool[chosen[i]]) ** 2, axis=1)
        dist = np.minimum(dist, cand)
    return pool[chosen]


def _seed_codebook_from_data(tokenizer: SceneTokenizer, prepared, seed: int, max_grids: int = 48) -> None:
    """Anchor the fresh codebook on a space-covering sample of actual encoder
    outputs so early quantization starts in-distribution and diverse."""
    from ..nn import no_grad

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xC0DE,)))
    with no_grad():
        latents = []
        for _, feats, valid in prepared[:max_grids]:
            latents.append(tokenizer.encode_from_inputs(feats, valid).data)
    pool = np.concatenate(latents, axis=0)
    k = tokenizer.cfg.k
    picks = _farthest_point_sample(pool, k, rng)
    noise = rng.standard_normal((k, tokenizer.cfg.c)).astype(np.float32) * 0.01
    tokenizer.codebook.data = picks + noise


def train_tokenizer(
    grids: list[OccupancyGrid],
    cfg: TokenizerConfig,
    train_cfg: TokenizerTrainConfig,
    tokenizer: SceneTokenizer | None = None,
    optimizer: AdamW | None = None,
    start_step: int = 0,
    on_step=None,
) -> tuple[SceneTokenizer, AdamW, list[dict]]:
    """Run optimizer steps over a grid dataset; returns model, optimizer and
    the per-step loss-component log. Batches are drawn from a per-step seeded
    stream so a checkpointed run resumes on the identical data order."""
    if not grids:
        raise ValueError("empty training set")
    if tokenizer is None:
        tokenizer = SceneTokenizer(cfg, np.random.default_rng(train_cfg.seed))
    if optimizer is None:
        optimizer = AdamW(
            tokenizer.params,
            lr=train_cfg.lr,
            weight_decay=train_cfg.weight_decay,
            lr_overrides={"codebook": train_cfg.lr * train_cfg.codebook_lr_mult},
        )

    # pillar inputs are constants per grid; prepare once
    prepared = []
    for g in grids:
        feats, valid = tokenizer.pillar_inputs(sparsify(g))
        prepared.append((g, feats, valid))

    warmup_end = int(round(train_cfg.steps * train_cfg.warmup_frac))
    if start_step >= warmup_end and start_step == 0:
        _seed_codebook_from_data(tokenizer, prepared, train_cfg.seed)

    log: list[dict] = []
    usage_window = np.zeros(cfg.k, dtype=np.int64)
    recent_latents: list[np.ndarray] = []

    for step in range(start_step, start_step + train_cfg.steps):
        rng = _step_rng(train_cfg.seed, step)
        picks = rng.integers(0, len(prepared), size=train_cfg.batch_size)
        if step == warmup_end and warmup_end > 0:
            _seed_codebook_from_data(tokenizer, prepared, train_cfg.seed)

        quantizing = step >= warmup_end
        optimizer.zero_grad()
        total = None
        comp_sum: dict[str, float] = {}
        for pick in picks:
            grid, feats, valid = prepared[pick]
            z = tokenizer.encode_from_inputs(feats, valid)
            if quantizing:
                zq, tokens = tokenizer.quantize(z)
                usage_window += np.bincount(tokens.indices, minlength=cfg.k)
            else:
                zq = z  # warmup: degenerate quantizer, embedding term is 0
            bridged = ste_quantize_bridge(z, zq)
            outputs = tokenizer.decode_latents(bridged)
            loss, comps = tokenizer_loss(outputs, grid, z, zq, cfg)
            total = loss if total is None else add(total, loss)
            for k_, v in comps.items():
                comp_sum[k_] = comp_sum.get(k_, 0.0) + v
            recent_latents.append(z.data.copy())

        total = mul(total, 1.0 / train_cfg.batch_size)
        comps = {k_: v / train_cfg.batch_size for k_, v in comp_sum.items()}
        if not math.isfinite(float(total.data)):
            raise TrainingDiverged(step, comps)
        total.backward()
        optimizer.step()

        record = {"step": step, **comps}
        log.append(record)
        if on_step is not None:
            on_step(record)

        reinit_cutoff = start_step + int(train_cfg.steps * train_cfg.reinit_stop_frac)
        if (
            quantizing
            and train_cfg.reinit_interval
            and (step + 1) % train_cfg.reinit_interval == 0
            and step < reinit_cutoff
        ):
            pool = np.concatenate(recent_latents, axis=0)
            n = reinit_dead_codes(tokenizer.codebook, usage_window, pool, rng)
            record["dead_codes_reinit"] = n
            usage_window[:] = 0
            recent_latents.clear()
        elif len(recent_latents) > 64 * train_cfg.batch_size:
            del recent_latents[: len(recent_latents) // 2]

    return tokenizer, optimizer, log
