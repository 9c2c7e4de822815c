"""Stage-2 pretraining (alternating objectives) and stage-3 LoRA tuning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..nn import AdamW
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.lora import LowRankAdapter
from ..vocab import EpisodeSequence, UnifiedVocabulary
from .config import WorldModelConfig
from .model import WorldModel
from .objectives import caption_objective_loss, wm_objective_loss


class PretrainDiverged(RuntimeError):
    def __init__(self, step: int, objective: str, value: float):
        super().__init__(f"non-finite {objective} loss {value} at step {step}")
        self.step = step


@dataclass
class PretrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 4
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    checkpoint_path: str | None = None


@dataclass
class TuneConfig:
    steps: int = 500
    lr: float = 5e-5
    batch_size: int = 4
    rank: int = 4
    alpha: float = 8.0
    seed: int = 0


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def _draw(episodes: list[EpisodeSequence], rng: np.random.Generator, n: int) -> list[EpisodeSequence]:
    picks = rng.integers(0, len(episodes), size=n)
    return [episodes[int(i)] for i in picks]


def pretrain(
    model: WorldModel,
    wm_episodes: list[EpisodeSequence],
    caption_episodes: list[EpisodeSequence],
    vocab: UnifiedVocabulary,
    cfg: PretrainConfig,
    optimizer: AdamW | None = None,
    start_step: int = 0,
    on_step=None,
) -> tuple[AdamW, list[dict]]:
    """Full-parameter training, 1:1 interleave of the world-model and
    scene-caption objectives (even steps world model, odd steps caption).
    Batch draws are seeded per step index so resume replays the same data."""
    if not wm_episodes:
        raise ValueError("no world-model episodes")
    if optimizer is None:
        optimizer = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    log: list[dict] = []
    for step in range(start_step, start_step + cfg.steps):
        rng = _step_rng(cfg.seed, step)
        use_caption = bool(caption_episodes) and step % 2 == 1
        if use_caption:
            batch = _draw(caption_episodes, rng, cfg.batch_size)
            loss = caption_objective_loss(model, batch, vocab)
            objective = "caption"
        else:
            batch = _draw(wm_episodes, rng, cfg.batch_size)
            loss = wm_objective_loss(model, batch, vocab)
            objective = "world_model"
        value = float(loss.data)
        if not math.isfinite(value):
            raise PretrainDiverged(step, objective, value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        rec = {"step": step, "objective": objective, "loss": value}
        log.append(rec)
        if on_step is not None:
            on_step(rec)
        if cfg.checkpoint_every and cfg.checkpoint_path and (step + 1) % cfg.checkpoint_every == 0:
            save_pretrain_checkpoint(cfg.checkpoint_path, model, optimizer, step + 1)
    return optimizer, log


def save_pretrain_checkpoint(path, model: WorldModel, optimizer: AdamW, next_step: int,
                             extra: dict | None = None) -> None:
    tensors = dict(model.params)
    tensors.update(optimizer.state_tensors())
    meta = {
        "kind": "world_model_train_state",
        "config": model._config_dict(),
        "next_step": next_step,
        "opt": {"lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                "eps": optimizer.eps, "weight_decay": optimizer.weight_decay,
                "step_count": optimizer.step_count},
    }
    if extra:
        meta.update(extra)
    save_checkpoint(path, tensors, meta)


def load_pretrain_checkpoint(path) -> tuple[WorldModel, AdamW, int, dict]:
    meta, tensors = load_checkpoint(path)
    cfg = WorldModelConfig(**meta["config"])
    model = WorldModel(cfg, np.random.default_rng(0))
    for name, p in model.params.items():
        p.data = tensors[name].copy()
    opt_meta = meta["opt"]
    optimizer = AdamW(model.params, lr=opt_meta["lr"], betas=(opt_meta["beta1"], opt_meta["beta2"]),
                      eps=opt_meta["eps"], weight_decay=opt_meta["weight_decay"])
    optimizer.load_state_tensors(tensors, opt_meta["step_count"])
    return model, optimizer, int(meta["next_step"]), meta


def instruction_tune(
    model: WorldModel,
    episodes: list[EpisodeSequence],
    vocab: UnifiedVocabulary,
    cfg: TuneConfig,
    on_step=None,
) -> tuple[dict[str, LowRankAdapter], list[dict]]:
    """LoRA on the attention projections; base weights stay frozen (their
    requires_grad is disabled for the duration, so no base gradients exist)."""
    if not episodes:
        raise ValueError("no instruction episodes")
    adapters = model.make_adapters(np.random.default_rng(cfg.seed), rank=cfg.rank, alpha=cfg.alpha)
    adapter_params = {}
    for name, ad in adapters.items():
        adapter_params[f"{name}.a"] = ad.a
        adapter_params[f"{name}.b"] = ad.b
    optimizer = AdamW(adapter_params, lr=cfg.lr)
    log: list[dict] = []

    frozen = {name: p.requires_grad for name, p in model.params.items()}
    for p in model.params.values():
        p.requires_grad = False
    try:
        for step in range(cfg.steps):
            rng = _step_rng(cfg.seed, step)
            batch = _draw(episodes, rng, cfg.batch_size)
            loss = caption_objective_loss(model, batch, vocab, adapters)
            value = float(loss.data)
            if not math.isfinite(value):
                raise PretrainDiverged(step, "instruction", value)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            rec = {"step": step, "objective": "instruction", "loss": value}
            log.append(rec)
            if on_step is not None:
                on_step(rec)
    finally:
        for name, p in model.params.items():
            p.requires_grad = frozen[name]
    return adapters, log


def save_adapters(path, adapters: dict[str, LowRankAdapter], base_checkpoint_hash: str,
                  extra: dict | None = None) -> None:
    tensors = {}
    ranks = {}
    for name, ad in adapters.items():
        tensors[f"{name}.a"] = ad.a
        tensors[f"{name}.b"] = ad.b
        ranks[name] = {"rank": ad.rank, "alpha": ad.alpha}
    meta = {"kind": "lora_adapters", "base_checkpoint_sha256": base_checkpoint_hash, "adapters": ranks}
    if extra:
        meta.update(extra)
    save_checkpoint(path, tensors, meta)


def load_adapters(path) -> tuple[dict[str, LowRankAdapter], dict]:
    from ..nn.tensor import Tensor

    meta, tensors = load_checkpoint(path)
    adapters = {}
    for name, spec in meta["adapters"].items():
        adapters[name] = LowRankAdapter(
            a=Tensor(tensors[f"{name}.a"], requires_grad=True),
            b=Tensor(tensors[f"{name}.b"], requires_grad=True),
            rank=int(spec["rank"]),
            alpha=float(spec["alpha"]),
        )
    return adapters, meta
