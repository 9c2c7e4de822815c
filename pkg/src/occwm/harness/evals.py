"""Task evaluations: 4D occupancy forecasting, motion planning, QA accuracy.

Malformed generations are always scored (zero overlap / fallback trajectory)
and surfaced as diagnostics, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..occ import OccupancyGrid, iou_geometry, miou_semantic
from ..vocab import parse_generated
from .bundle import ModelBundle, OracleBundle
from .synth import Scenario, column_occupied


@dataclass
class EvalReport:
    """Mirrors the rows of the forecasting/planning/QA result tables."""

    forecast: dict | None = None
    plan: dict | None = None
    qa: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"metadata": self.metadata}
        for key in ("forecast", "plan", "qa"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def _forecast_generation(bundle, scenario: Scenario, history: int, horizon: int):
    if isinstance(bundle, OracleBundle):
        return bundle.oracle_generation(scenario, history, horizon)
    return bundle.complete(bundle.forecast_prompt(scenario, history))


def eval_forecast(bundle, scenarios: list[Scenario], history: int = 2, horizon: int = 3,
                  labels=None) -> dict:
    """mIoU/IoU of predicted future grids per horizon step.

    Scene blocks beyond the history are decoded and scored against the GT
    grids; a missing or malformed block scores 0 for its horizon.
    """
    if labels is None:
        labels = scenarios[0].cfg.classes
    action_as_text = getattr(bundle, "action_as_text", False)
    miou = np.zeros(horizon)
    iou = np.zeros(horizon)
    recon_miou = np.zeros(horizon)
    recon_iou = np.zeros(horizon)
    diagnostics: list[str] = []

    for si, sc in enumerate(scenarios):
        if len(sc.grids) < history + horizon:
            raise ValueError("scenario too short for the requested horizons")
        gen = _forecast_generation(bundle, sc, history, horizon)
        parsed = parse_generated(gen.tokens, bundle.vocab, action_as_text=action_as_text)
        diagnostics.extend(f"scenario {si}: {d}" for d in parsed.diagnostics)
        future = parsed.scenes[history:]
        for h in range(horizon):
            gt = sc.grids[history + h]
            rec = bundle.decode_scene(bundle.scene_codes(gt), gt.voxel_size)
            recon_miou[h] += miou_semantic(rec, gt, labels)
            recon_iou[h] += iou_geometry(rec, gt)
            if h < len(future):
                pred = bundle.decode_scene(future[h], gt.voxel_size)
                miou[h] += miou_semantic(pred, gt, labels)
                iou[h] += iou_geometry(pred, gt)
            else:
                diagnostics.append(f"scenario {si}: no scene block for horizon +{h + 1}")
        if gen.meta.get("truncated"):
            diagnostics.append(f"scenario {si}: generation truncated")

    n = len(scenarios)
    per_h = [
        {"horizon": h + 1, "miou": miou[h] / n, "iou": iou[h] / n,
         "recon_miou": recon_miou[h] / n, "recon_iou": recon_iou[h] / n}
        for h in range(horizon)
    ]
    return {
        "per_horizon": per_h,
        "avg": {"miou": float(miou.mean() / n), "iou": float(iou.mean() / n)},
        "recon": {"miou": float(recon_miou.mean() / n), "iou": float(recon_iou.mean() / n)},
        "episodes": n,
        "diagnostics": diagnostics,
    }


def eval_plan(bundle, scenarios: list[Scenario], history: int = 2, horizon: int = 3,
              mode: str = "with_scene") -> dict:
    """L2 between predicted and GT cumulative displacement plus collision
    rate of predicted waypoints against GT grids (1-cell ego footprint)."""
    if mode not in ("with_scene", "action_only"):
        raise ValueError(f"unknown planning mode {mode!r}")
    action_as_text = getattr(bundle, "action_as_text", False)
    l2 = np.zeros(horizon)
    coll = np.zeros(horizon)
    diagnostics: list[str] = []

    for si, sc in enumerate(scenarios):
        if len(sc.grids) < history + horizon + 1:
            raise ValueError("scenario too short: planning needs a grid one step past the horizon")
        disp = sc.ego_displacements
        if isinstance(bundle, OracleBundle):
            gen = bundle.oracle_generation(sc, history, horizon)
        else:
            gen = bundle.complete(bundle.forecast_prompt(sc, history),
                                  suppress_scene=(mode == "action_only"))
        parsed = parse_generated(gen.tokens, bundle.vocab, action_as_text=action_as_text)
        diagnostics.extend(f"scenario {si}: {d}" for d in parsed.diagnostics)

        pred = list(parsed.trajectory[history:])
        if len(pred) < horizon:
            fallback = disp[history - 1] if history >= 1 else (0.0, 0.0)
            diagnostics.append(
                f"scenario {si}: {len(pred)}/{horizon} waypoints parsed, constant-velocity fallback"
            )
            pred = pred + [fallback] * (horizon - len(pred))
        pred = pred[:horizon]

        ego0 = np.array(sc.ego_positions[history], dtype=np.float64)
        cum_pred = np.cumsum(np.array(pred, dtype=np.float64), axis=0)
        cum_gt = np.cumsum(np.array(disp[history : history + horizon], dtype=np.float64), axis=0)
        for h in range(horizon):
            l2[h] += float(np.linalg.norm(cum_pred[h] - cum_gt[h]))
            pos = ego0 + cum_pred[h]
            cell = (int(np.floor(pos[0])), int(np.floor(pos[1])))
            if column_occupied(sc.grids[history + h + 1], cell):
                coll[h] += 1.0

    n = len(scenarios)
    per_h = [
        {"horizon": h + 1, "l2": l2[h] / n, "collision_pct": 100.0 * coll[h] / n}
        for h in range(horizon)
    ]
    return {
        "per_horizon": per_h,
        "avg": {"l2": float(l2.mean() / n), "collision_pct": float(100.0 * coll.mean() / n)},
        "mode": mode,
        "episodes": n,
        "diagnostics": diagnostics,
    }


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def eval_qa(bundle: ModelBundle, qa_items: list[tuple[OccupancyGrid, object]]) -> dict:
    """Top-1 exact-match accuracy per category/hop and overall."""
    per: dict[tuple[str, str], list[int]] = {}
    diagnostics: list[str] = []
    correct_total = 0
    for qi, (grid, item) in enumerate(qa_items):
        gen = bundle.complete(bundle.qa_prompt(grid, item.question))
        parsed = parse_generated(gen.tokens, bundle.vocab)
        got = normalize_answer(parsed.answer)
        if not got:
            diagnostics.append(f"item {qi}: empty generation")
        ok = int(got == normalize_answer(item.answer))
        correct_total += ok
        per.setdefault((item.category, item.hop), []).append(ok)

    def acc(vals):
        return float(np.mean(vals)) if vals else 0.0

    categories = sorted({c for c, _ in per})
    by_cat = {}
    for c in categories:
        h0 = per.get((c, "h0"), [])
        h1 = per.get((c, "h1"), [])
        by_cat[c] = {"h0": acc(h0), "h1": acc(h1), "all": acc(h0 + h1),
                     "n": len(h0) + len(h1)}
    return {
        "overall": correct_total / len(qa_items) if qa_items else 0.0,
        "by_category": by_cat,
        "items": len(qa_items),
        "diagnostics": diagnostics,
    }
