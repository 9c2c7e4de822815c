"""VQ scene tokenizer: pillar encoder, codebook quantizer, conv decoder.

encode() maps a grid to (L, c) latents via pillar embedding, windowed
self-attention over the BEV plane, and strided patch merging; quantize()
snaps latents to nearest codebook entries; decode() reconstructs voxel
(occupied-vs-air) and per-class logits from token ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import (
    Tensor,
    add,
    concat,
    conv2d,
    gather_rows,
    gelu,
    layer_norm,
    masked_pool_max,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    swap_last,
    transpose,
    upsample2x,
)

_COORD_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _coord_planes(h: int, w: int) -> np.ndarray:
    """Two constant channels of normalized (x, y) cell coordinates."""
    key = (h, w)
    if key not in _COORD_CACHE:
        xs = np.linspace(-1.0, 1.0, h, dtype=np.float32)
        ys = np.linspace(-1.0, 1.0, w, dtype=np.float32)
        _COORD_CACHE[key] = np.stack(
            [np.repeat(xs[:, None], w, axis=1), np.repeat(ys[None, :], h, axis=0)]
        )
    return _COORD_CACHE[key]
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..occ import AIR_ID, OccupancyGrid, PillarCloud, sparsify
from .config import TokenizerConfig


@dataclass(frozen=True)
class SceneTokens:
    """Row-major codebook indices for one grid; fixed length L."""

    indices: np.ndarray
    k: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("scene token indices must be 1-d")
        if idx.size and (idx.min() < 0 or idx.max() >= self.k):
            raise ValueError("scene token index out of codebook range")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        return (
            isinstance(other, SceneTokens)
            and self.k == other.k
            and np.array_equal(self.indices, other.indices)
        )


def quantize_indices(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest entry per row by squared Euclidean distance, ties to the
    smallest index (argmin keeps the first minimum)."""
    diff = z[:, None, :] - codebook[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    return np.argmin(d2, axis=1)


class SceneTokenizer:
    """Parameter container plus the encode/quantize/decode graph builders."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        p = self.params
        pf = cfg.point_feat
        in_feat = 1 + cfg.num_classes

        def w(name, shape, fan_in, gain=1.0):
            p[name] = Tensor(
                rng.standard_normal(shape).astype(np.float32)
                * np.float32(gain / np.sqrt(fan_in)),
                requires_grad=True,
                name=name,
            )

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True, name=name)

        def ones(name, shape):
            p[name] = Tensor(np.ones(shape, dtype=np.float32), requires_grad=True, name=name)

        # gain 2 compensates the ~0.5 small-signal slope of relu/gelu stacks,
        # keeping content (not just bias priors) alive through the depth
        w("pillar.w1", (pf, in_feat), in_feat, gain=2.0)
        zeros("pillar.b1", (pf,))
        w("pillar.w2", (pf, pf), pf, gain=2.0)
        zeros("pillar.b2", (pf,))

        for i in range(cfg.enc_blocks):
            ones(f"enc.{i}.ln1.g", (pf,))
            zeros(f"enc.{i}.ln1.b", (pf,))
            for nm in ("wq", "wk", "wv", "wo"):
                w(f"enc.{i}.attn.{nm}", (pf, pf), pf)
            ones(f"enc.{i}.ln2.g", (pf,))
            zeros(f"enc.{i}.ln2.b", (pf,))
            w(f"enc.{i}.ffn.w1", (2 * pf, pf), pf)
            zeros(f"enc.{i}.ffn.b1", (2 * pf,))
            w(f"enc.{i}.ffn.w2", (pf, 2 * pf), 2 * pf)
            zeros(f"enc.{i}.ffn.b2", (pf,))
        ones("enc.lnf.g", (pf,))
        zeros("enc.lnf.b", (pf,))

        w("merge.w", (cfg.c, cfg.r * cfg.r * pf), cfg.r * cfg.r * pf)
        zeros("merge.b", (cfg.c,))

        p["codebook"] = Tensor(
            rng.standard_normal((cfg.k, cfg.c)).astype(np.float32) / np.float32(np.sqrt(cfg.c)),
            requires_grad=True,
            name="codebook",
        )

        ch = cfg.dec_channels
        # +2 input planes per conv: constant normalized (x, y) coordinates.
        # nearest-neighbor upsampling copies a latent cell verbatim, so
        # without them the sub-cells of a block are not identifiable.
        w("dec.stem.w", (ch, cfg.c + 2, 3, 3), (cfg.c + 2) * 9, gain=2.0)
        zeros("dec.stem.b", (ch,))
        for s in range(cfg.upsample_stages):
            w(f"dec.{s}.conv0.w", (ch, ch + 2, 3, 3), (ch + 2) * 9, gain=2.0)
            zeros(f"dec.{s}.conv0.b", (ch,))
            w(f"dec.{s}.conv1.w", (ch, ch + 2, 3, 3), (ch + 2) * 9, gain=2.0)
            zeros(f"dec.{s}.conv1.b", (ch,))
        w("head.voxel.w", (cfg.d, ch), ch)
        zeros("head.voxel.b", (cfg.d,))
        w("head.cls.w", (cfg.d * (cfg.num_classes - 1), ch), ch)
        zeros("head.cls.b", (cfg.d * (cfg.num_classes - 1),))

    @property
    def codebook(self) -> Tensor:
        return self.params["codebook"]

    # ---- encoder ----

    def pillar_inputs(self, pillars: PillarCloud) -> tuple[np.ndarray, np.ndarray]:
        """Constant padded point features (P, M, 1+num_classes) + valid mask.

        Each point is [d / (depth-1), one-hot(label)]; cacheable per grid.
        """
        cfg = self.cfg
        n_cells = cfg.h * cfg.w
        m = max(pillars.max_points(), 1)
        feats = np.zeros((n_cells, m, 1 + cfg.num_classes), dtype=np.float32)
        valid = np.zeros((n_cells, m), dtype=bool)
        denom = max(cfg.d - 1, 1)
        for cell, pts in enumerate(pillars.pillars):
            for slot, (z, l) in enumerate(pts):
                if z >= cfg.d:
                    raise ValueError(f"pillar height {z} exceeds grid depth {cfg.d}")
                feats[cell, slot, 0] = z / denom
                feats[cell, slot, 1 + l] = 1.0
                valid[cell, slot] = True
        return feats, valid

    def pillar_embed(self, pillars: PillarCloud) -> Tensor:
        feats, valid = self.pillar_inputs(pillars)
        return self._pillar_embed_from_inputs(feats, valid)

    def _pillar_embed_from_inputs(self, feats: np.ndarray, valid: np.ndarray) -> Tensor:
        p = self.params
        n_cells, m, in_feat = feats.shape
        x = Tensor(feats.reshape(n_cells * m, in_feat))
        h = relu(add(matmul(x, swap_last(p["pillar.w1"])), p["pillar.b1"]))
        h = add(matmul(h, swap_last(p["pillar.w2"])), p["pillar.b2"])
        h = reshape(h, (n_cells, m, self.cfg.point_feat))
        return masked_pool_max(h, valid)  # (h*w, point_feat)

    def _window_block(self, x: Tensor, i: int) -> Tensor:
        """Pre-norm attention + FFN inside each non-overlapping window.

        x arrives as (n_windows, window_area, point_feat); attention is full
        (bidirectional) within a window.
        """
        p = self.params
        pf = self.cfg.point_feat
        h = layer_norm(x, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
        q = matmul(h, swap_last(p[f"enc.{i}.attn.wq"]))
        k = matmul(h, swap_last(p[f"enc.{i}.attn.wk"]))
        v = matmul(h, swap_last(p[f"enc.{i}.attn.wv"]))
        scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(pf))
        att = matmul(softmax(scores, axis=-1), v)
        x = add(x, matmul(att, swap_last(p[f"enc.{i}.attn.wo"])))
        h = layer_norm(x, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
        h = gelu(add(matmul(h, swap_last(p[f"enc.{i}.ffn.w1"])), p[f"enc.{i}.ffn.b1"]))
        h = add(matmul(h, swap_last(p[f"enc.{i}.ffn.w2"])), p[f"enc.{i}.ffn.b2"])
        return add(x, h)

    def encode(self, grid: OccupancyGrid) -> Tensor:
        pillars = sparsify(grid)
        feats, valid = self.pillar_inputs(pillars)
        return self.encode_from_inputs(feats, valid)

    def encode_from_inputs(self, feats: np.ndarray, valid: np.ndarray) -> Tensor:
        """(L, c) latents, row-major over the downsampled BEV map."""
        cfg = self.cfg
        if feats.shape[0] != cfg.h * cfg.w:
            raise ValueError("pillar inputs do not match the configured BEV plane")
        x = self._pillar_embed_from_inputs(feats, valid)  # (h*w, pf)
        wd, pf = cfg.window, cfg.point_feat
        nh, nw = cfg.h // wd, cfg.w // wd

        x = reshape(x, (nh, wd, nw, wd, pf))
        x = transpose(x, (0, 2, 1, 3, 4))
        x = reshape(x, (nh * nw, wd * wd, pf))
        for i in range(cfg.enc_blocks):
            x = self._window_block(x, i)
        # closing norm of the pre-norm stack; keeps the latent scale anchored
        # so quantization targets do not drift
        x = layer_norm(x, self.params["enc.lnf.g"], self.params["enc.lnf.b"])
        x = reshape(x, (nh, nw, wd, wd, pf))
        x = transpose(x, (0, 2, 1, 3, 4))
        x = reshape(x, (cfg.h, cfg.w, pf))

        r = cfg.r
        hr, wr = cfg.latent_hw
        x = reshape(x, (hr, r, wr, r, pf))
        x = transpose(x, (0, 2, 1, 3, 4))
        x = reshape(x, (cfg.token_len, r * r * pf))
        return add(matmul(x, swap_last(self.params["merge.w"])), self.params["merge.b"])

    # ---- quantizer ----

    def quantize(self, z: Tensor) -> tuple[Tensor, SceneTokens]:
        """Nearest-codebook snap: returns the selected entries (with graph to
        the codebook for the embedding loss) and the index sequence."""
        idx = quantize_indices(z.data, self.codebook.data)
        zq = gather_rows(self.codebook, idx)
        return zq, SceneTokens(idx, self.cfg.k)

    # ---- decoder ----

    def decode_latents(self, zq: Tensor) -> tuple[Tensor, Tensor]:
        """(voxel_logits (h,w,d), class_logits (h,w,d,num_classes-1)) from an
        (L, c) latent tensor (quantized entries or the STE bridge output)."""
        cfg = self.cfg
        hr, wr = cfg.latent_hw
        p = self.params

        def conv_block(t, name):
            t = concat([t, Tensor(_coord_planes(t.shape[1], t.shape[2]))], axis=0)
            t = conv2d(t, p[f"{name}.w"])
            t = add(t, reshape(p[f"{name}.b"], (-1, 1, 1)))
            return gelu(t)

        x = transpose(reshape(zq, (hr, wr, cfg.c)), (2, 0, 1))  # (c, hr, wr)
        x = conv_block(x, "dec.stem")
        for s in range(cfg.upsample_stages):
            x = upsample2x(x)
            x = conv_block(x, f"dec.{s}.conv0")
            x = add(x, conv_block(x, f"dec.{s}.conv1"))  # residual keeps content flowing
        ch = x.shape[0]
        flat = transpose(reshape(x, (ch, cfg.h * cfg.w)), (1, 0))  # (h*w, ch)
        vox = add(matmul(flat, swap_last(p["head.voxel.w"])), p["head.voxel.b"])
        cls = add(matmul(flat, swap_last(p["head.cls.w"])), p["head.cls.b"])
        voxel_logits = reshape(vox, (cfg.h, cfg.w, cfg.d))
        class_logits = reshape(cls, (cfg.h, cfg.w, cfg.d, cfg.num_classes - 1))
        return voxel_logits, class_logits

    def decode(self, tokens: SceneTokens) -> tuple[Tensor, Tensor]:
        if len(tokens) != self.cfg.token_len:
            raise ValueError(f"expected {self.cfg.token_len} tokens, got {len(tokens)}")
        zq = gather_rows(self.codebook, tokens.indices)
        return self.decode_latents(zq)

    # ---- end-to-end conveniences ----

    def encode_tokens(self, grid: OccupancyGrid) -> SceneTokens:
        with no_grad():
            z = self.encode(grid)
            return SceneTokens(quantize_indices(z.data, self.codebook.data), self.cfg.k)

    def decode_grid(self, tokens: SceneTokens, voxel_size: float = 1.0) -> OccupancyGrid:
        with no_grad():
            voxel_logits, class_logits = self.decode(tokens)
        return hard_decode(voxel_logits.data, class_logits.data, voxel_size)

    def reconstruct(self, grid: OccupancyGrid) -> OccupancyGrid:
        return self.decode_grid(self.encode_tokens(grid), grid.voxel_size)

    # ---- persistence ----

    def save(self, path, extra_metadata: dict | None = None) -> None:
        meta = {
            "kind": "scene_tokenizer",
            "config": {
                "h": self.cfg.h, "w": self.cfg.w, "d": self.cfg.d,
                "num_classes": self.cfg.num_classes, "r": self.cfg.r,
                "c": self.cfg.c, "k": self.cfg.k,
                "lambdas": list(self.cfg.lambdas), "window": self.cfg.window,
                "point_feat": self.cfg.point_feat, "enc_blocks": self.cfg.enc_blocks,
                "dec_channels": self.cfg.dec_channels, "commitment": self.cfg.commitment,
            },
        }
        if extra_metadata:
            meta.update(extra_metadata)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["SceneTokenizer", dict]:
        meta, tensors = load_checkpoint(path)
        cfgd = dict(meta["config"])
        cfgd["lambdas"] = tuple(cfgd["lambdas"])
        cfg = TokenizerConfig(**cfgd)
        tok = cls(cfg, np.random.default_rng(0))
        for name, p in tok.params.items():
            p.data = tensors[name].copy()
        return tok, meta


def hard_decode(voxel_logits: np.ndarray, class_logits: np.ndarray, voxel_size: float = 1.0) -> OccupancyGrid:
    """Occupied iff sigmoid(voxel_logit) > 0.5; occupied voxels take
    argmax class + 1, everything else air."""
    occupied = voxel_logits > 0.0
    labels = np.zeros(voxel_logits.shape, dtype=np.uint8)
    cls = np.argmax(class_logits, axis=-1).astype(np.uint8) + 1
    labels[occupied] = cls[occupied]
    return OccupancyGrid(labels, voxel_size)
