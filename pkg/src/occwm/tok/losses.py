"""Tokenizer training objective: CE + Lovász for geometry and semantics,
plus the VQ embedding/commitment term."""

from __future__ import annotations

import numpy as np

from ..nn import (
    Tensor,
    add,
    binary_cross_entropy_with_logits,
    cross_entropy,
    detach,
    gather_rows,
    mul,
    reshape,
    sigmoid,
    softmax,
    stack_cols,
    tmean,
    tsum,
)
from ..occ import AIR_ID, OccupancyGrid
from .config import TokenizerConfig


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard set loss along a sorted error permutation."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if gt_sorted.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard.astype(np.float32)


def lovasz_softmax(probs: Tensor, targets) -> Tensor:
    """Lovász extension of the Jaccard loss, averaged over the classes
    present in targets. probs rows must sum to 1 over the class axis."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = probs.shape
    if n == 0:
        raise ValueError("lovasz_softmax needs at least one element")
    if targets.shape != (n,):
        raise ValueError("one target per probability row required")
    present = np.unique(targets)
    per_class = []
    for cls in present:
        fg = (targets == cls).astype(np.float32)
        p_c = select_class_column(probs, int(cls))
        # errors: 1 - p for positives, p for negatives == fg + (1 - 2 fg) * p
        err = add(mul(p_c, 1.0 - 2.0 * fg), fg)
        order = np.argsort(-err.data, kind="stable")
        err_sorted = gather_rows(err, order)
        coef = lovasz_grad(fg[order])
        per_class.append(tsum(mul(err_sorted, coef)))
    total = per_class[0]
    for t in per_class[1:]:
        total = add(total, t)
    return mul(total, 1.0 / len(per_class))


def select_class_column(probs: Tensor, cls: int) -> Tensor:
    onehot = np.zeros((probs.shape[1],), dtype=np.float32)
    onehot[cls] = 1.0
    return tsum(mul(probs, onehot), axis=1)


def tokenizer_loss(
    outputs: tuple[Tensor, Tensor],
    grid_gt: OccupancyGrid,
    z: Tensor,
    zq: Tensor,
    cfg: TokenizerConfig,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the five objective terms.

    Geometry terms score occupied-vs-air over every voxel; semantic terms are
    evaluated only at ground-truth-occupied voxels (zero contribution when the
    grid is empty). The embedding term is the VQ split
    mse(sg(z), zq) + commitment * mse(z, sg(zq)).
    """
    voxel_logits, class_logits = outputs
    l1, l2, l3, l4, l5 = cfg.lambdas
    occupied = grid_gt.occupied_mask()
    occ_flat = occupied.reshape(-1).astype(np.float32)
    n_vox = occ_flat.size

    vox_flat = reshape(voxel_logits, (n_vox,))
    ce_geo = binary_cross_entropy_with_logits(vox_flat, occ_flat)

    p_occ = sigmoid(vox_flat)
    probs_geo = stack_cols([add(mul(p_occ, -1.0), 1.0), p_occ])
    lov_geo = lovasz_softmax(probs_geo, occ_flat.astype(np.int64))

    occ_idx = np.nonzero(occupied.reshape(-1))[0]
    if occ_idx.size:
        cls_flat = reshape(class_logits, (n_vox, cfg.num_classes - 1))
        cls_at_occ = gather_rows(cls_flat, occ_idx)
        sem_targets = grid_gt.labels.reshape(-1)[occ_idx].astype(np.int64) - 1
        ce_sem = cross_entropy(cls_at_occ, sem_targets)
        lov_sem = lovasz_softmax(softmax(cls_at_occ, axis=-1), sem_targets)
    else:
        ce_sem = Tensor(0.0)
        lov_sem = Tensor(0.0)

    embed = add(
        tmean(add(detach(z), mul(zq, -1.0)) ** 2.0),
        mul(tmean(add(z, mul(detach(zq), -1.0)) ** 2.0), cfg.commitment),
    )

    total = add(
        add(add(mul(ce_geo, l1), mul(lov_geo, l2)), add(mul(ce_sem, l3), mul(lov_sem, l4))),
        mul(embed, l5),
    )
    components = {
        "ce_geometry": float(ce_geo.data),
        "lovasz_geometry": float(lov_geo.data),
        "ce_semantics": float(ce_sem.data),
        "lovasz_semantics": float(lov_sem.data),
        "embedding": float(embed.data),
        "total": float(total.data),
    }
    return total, components
