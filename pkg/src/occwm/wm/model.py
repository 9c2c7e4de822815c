"""Decoder-only transformer over the unified vocabulary.

Learned absolute positions plus a learned 2D (row, col) embedding added at
scene-span positions; pre-norm residual blocks with mixed-mask multi-head
attention; output projection tied to the token embedding matrix. Attention
projections accept optional low-rank adapters for instruction tuning.
"""

from __future__ import annotations

import numpy as np

from ..nn import (
    Tensor,
    add,
    gather_rows,
    gelu,
    layer_norm,
    lora_apply,
    matmul,
    mul,
    reshape,
    softmax,
    swap_last,
    transpose,
)
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.lora import LowRankAdapter
from .config import WorldModelConfig
from .mask import MixedMaskSpec, build_mixed_mask

ADAPTED_PROJECTIONS = ("wq", "wk", "wv", "wo")


class WorldModel:
    def __init__(self, cfg: WorldModelConfig, rng: np.random.Generator):
        if cfg.vocab_total < 1:
            raise ValueError("vocab_total must be set before building the model")
        self.cfg = cfg
        d = cfg.d_model
        self.params: dict[str, Tensor] = {}
        p = self.params

        def norm(name, shape, scale):
            p[name] = Tensor(
                rng.standard_normal(shape).astype(np.float32) * np.float32(scale),
                requires_grad=True,
                name=name,
            )

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True, name=name)

        def ones(name, shape):
            p[name] = Tensor(np.ones(shape, dtype=np.float32), requires_grad=True, name=name)

        norm("emb", (cfg.vocab_total, d), 0.02)
        norm("pos", (cfg.max_len, d), 0.01)
        norm("srow", (cfg.scene_rows, d), 0.01)
        norm("scol", (cfg.scene_cols, d), 0.01)
        resid_scale = 1.0 / np.sqrt(d * 2.0 * cfg.layers)
        for i in range(cfg.layers):
            ones(f"l{i}.ln1.g", (d,))
            zeros(f"l{i}.ln1.b", (d,))
            for nm in ("wq", "wk", "wv"):
                norm(f"l{i}.attn.{nm}", (d, d), 1.0 / np.sqrt(d))
            norm(f"l{i}.attn.wo", (d, d), resid_scale)
            ones(f"l{i}.ln2.g", (d,))
            zeros(f"l{i}.ln2.b", (d,))
            norm(f"l{i}.ffn.w1", (cfg.ffn_mult * d, d), 1.0 / np.sqrt(d))
            zeros(f"l{i}.ffn.b1", (cfg.ffn_mult * d,))
            norm(f"l{i}.ffn.w2", (d, cfg.ffn_mult * d), resid_scale * np.sqrt(d / (cfg.ffn_mult * d)))
            zeros(f"l{i}.ffn.b2", (d,))
        ones("lnf.g", (d,))
        zeros("lnf.b", (d,))

    # ---- forward ----

    def _scene_position_embedding(self, t: int, scene_spans) -> Tensor | None:
        """Additive (row, col) embedding at in-span positions, zero elsewhere."""
        if not scene_spans:
            return None
        rows = np.zeros(t, dtype=np.int64)
        cols = np.zeros(t, dtype=np.int64)
        gate = np.zeros((t, 1), dtype=np.float32)
        for s, e in scene_spans:
            offs = np.arange(e - s)
            rows[s:e] = offs // self.cfg.scene_cols
            cols[s:e] = offs % self.cfg.scene_cols
            gate[s:e] = 1.0
        emb2d = add(gather_rows(self.params["srow"], rows), gather_rows(self.params["scol"], cols))
        return mul(emb2d, gate)

    def forward(self, tokens, scene_spans=(), adapters: dict | None = None) -> Tensor:
        """(T,) int token ids -> (T, vocab_total) logits."""
        tokens = np.asarray(tokens, dtype=np.int64)
        t = tokens.shape[0]
        cfg = self.cfg
        if t > cfg.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_total):
            raise ValueError("token id outside the vocabulary")
        for s, e in scene_spans:
            if e - s not in (cfg.scene_len,):
                raise ValueError(f"scene span ({s},{e}) must cover {cfg.scene_len} positions")

        p = self.params
        x = add(gather_rows(p["emb"], tokens), gather_rows(p["pos"], np.arange(t)))
        pos2d = self._scene_position_embedding(t, scene_spans)
        if pos2d is not None:
            x = add(x, pos2d)

        mask = build_mixed_mask(MixedMaskSpec(t, tuple(scene_spans)), cfg.spatial_attention)
        addmask = np.where(mask, np.float32(0.0), np.float32(-np.inf))

        heads, dh = cfg.heads, cfg.head_dim
        for i in range(cfg.layers):
            h = layer_norm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
            qkv = []
            for nm in ("wq", "wk", "wv"):
                ad = adapters.get(f"l{i}.attn.{nm}") if adapters else None
                proj = lora_apply(h, p[f"l{i}.attn.{nm}"], ad)
                qkv.append(transpose(reshape(proj, (t, heads, dh)), (1, 0, 2)))
            q, k, v = qkv
            scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(dh))
            scores = add(scores, addmask)
            att = matmul(softmax(scores, axis=-1), v)
            att = reshape(transpose(att, (1, 0, 2)), (t, cfg.d_model))
            ad_o = adapters.get(f"l{i}.attn.wo") if adapters else None
            x = add(x, lora_apply(att, p[f"l{i}.attn.wo"], ad_o))

            h = layer_norm(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
            h = gelu(add(matmul(h, swap_last(p[f"l{i}.ffn.w1"])), p[f"l{i}.ffn.b1"]))
            h = add(matmul(h, swap_last(p[f"l{i}.ffn.w2"])), p[f"l{i}.ffn.b2"])
            x = add(x, h)

        x = layer_norm(x, p["lnf.g"], p["lnf.b"])
        return matmul(x, swap_last(p["emb"]))  # tied output projection

    # ---- adapters ----

    def make_adapters(self, rng: np.random.Generator, rank: int = 4, alpha: float = 8.0) -> dict[str, LowRankAdapter]:
        out: dict[str, LowRankAdapter] = {}
        d = self.cfg.d_model
        for i in range(self.cfg.layers):
            for nm in ADAPTED_PROJECTIONS:
                out[f"l{i}.attn.{nm}"] = LowRankAdapter.create(rng, d, d, rank=rank, alpha=alpha)
        return out

    def merge_adapters(self, adapters: dict[str, LowRankAdapter]) -> "WorldModel":
        """A new model with adapter deltas folded into the attention weights."""
        from ..nn.lora import lora_merge

        merged = WorldModel(self.cfg, np.random.default_rng(0))
        for name, p in self.params.items():
            merged.params[name].data = p.data.copy()
        for name, ad in adapters.items():
            merged.params[name].data = lora_merge(self.params[name], ad).data
        return merged

    # ---- persistence ----

    def _config_dict(self) -> dict:
        c = self.cfg
        return {
            "layers": c.layers, "heads": c.heads, "d_model": c.d_model,
            "max_len": c.max_len, "scene_len": c.scene_len,
            "scene_rows": c.scene_rows, "scene_cols": c.scene_cols,
            "vocab_total": c.vocab_total,
            "spatial_attention": c.spatial_attention,
            "action_tokenization": c.action_tokenization,
            "sampling": c.sampling, "temperature": c.temperature,
            "ffn_mult": c.ffn_mult, "constrained_decoding": c.constrained_decoding,
        }

    def save(self, path, extra_metadata: dict | None = None) -> None:
        meta = {"kind": "world_model", "config": self._config_dict()}
        if extra_metadata:
            meta.update(extra_metadata)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["WorldModel", dict]:
        meta, tensors = load_checkpoint(path)
        cfg = WorldModelConfig(**meta["config"])
        model = cls(cfg, np.random.default_rng(0))
        for name, p in model.params.items():
            p.data = tensors[name].copy()
        return model, meta
