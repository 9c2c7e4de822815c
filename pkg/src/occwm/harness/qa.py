"""Rule-based QA over synthetic scenarios.

Five categories (existence, counting, query-object, query-status,
comparison), each at zero-hop (whole scene) and one-hop (region-
conditioned) complexity. Every item carries its structured rule so the
stored answer can be re-derived by the same oracle (`answer_rule`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .captions import REGION_ORDER, object_region, object_state
from .synth import Scenario

CATEGORIES = ("existence", "counting", "query-object", "query-status", "comparison")


@dataclass(frozen=True)
class QAItem:
    question: str
    answer: str
    category: str
    hop: str
    rule: dict
    frame: int


def _objects_in_region(scenario: Scenario, t: int, region: str):
    ego = scenario.ego_positions[t]
    return [o for o in scenario.objects if object_region(o, t, ego) == region]


def _objects_of_class(scenario: Scenario, cls_name: str):
    names = scenario.cfg.classes.names
    return [o for o in scenario.objects if names[o.class_id] == cls_name]


def answer_rule(scenario: Scenario, t: int, rule: dict) -> str:
    """Oracle: evaluate a structured rule against the scenario."""
    kind = rule["kind"]
    names = scenario.cfg.classes.names
    if kind == "exist":
        return "yes" if _objects_of_class(scenario, rule["cls"]) else "no"
    if kind == "exist_region":
        objs = _objects_in_region(scenario, t, rule["region"])
        return "yes" if any(names[o.class_id] == rule["cls"] for o in objs) else "no"
    if kind == "count":
        return str(len(_objects_of_class(scenario, rule["cls"])))
    if kind == "count_region":
        objs = _objects_in_region(scenario, t, rule["region"])
        return str(sum(1 for o in objs if names[o.class_id] == rule["cls"]))
    if kind == "largest_object":
        volumes = [(o.size[0] * o.size[1] * o.size[2], names[o.class_id]) for o in scenario.objects]
        volumes.sort(reverse=True)
        return volumes[0][1]
    if kind == "object_region":
        objs = _objects_in_region(scenario, t, rule["region"])
        if len(objs) != 1:
            raise ValueError("object_region rule requires exactly one object in the region")
        return names[objs[0].class_id]
    if kind == "status_class":
        objs = _objects_of_class(scenario, rule["cls"])
        if len(objs) != 1:
            raise ValueError("status_class rule requires a unique object of the class")
        return object_state(objs[0])
    if kind == "status_region":
        objs = _objects_in_region(scenario, t, rule["region"])
        if len(objs) != 1:
            raise ValueError("status_region rule requires exactly one object in the region")
        return object_state(objs[0])
    if kind == "compare":
        a = len(_objects_of_class(scenario, rule["cls_a"]))
        b = len(_objects_of_class(scenario, rule["cls_b"]))
        return "yes" if a > b else "no"
    if kind == "compare_region":
        objs = _objects_in_region(scenario, t, rule["region"])
        a = sum(1 for o in objs if names[o.class_id] == rule["cls_a"])
        b = sum(1 for o in objs if names[o.class_id] == rule["cls_b"])
        return "yes" if a > b else "no"
    raise ValueError(f"unknown rule kind {kind!r}")


def _question_text(rule: dict) -> str:
    kind = rule["kind"]
    if kind == "exist":
        return f"is there a {rule['cls']} in the scene"
    if kind == "exist_region":
        return f"is there a {rule['cls']} in the {rule['region']} region"
    if kind == "count":
        return f"how many {rule['cls']} objects are there"
    if kind == "count_region":
        return f"how many {rule['cls']} objects are in the {rule['region']} region"
    if kind == "largest_object":
        return "what is the largest object in the scene"
    if kind == "object_region":
        return f"what is the object in the {rule['region']} region"
    if kind == "status_class":
        return f"is the {rule['cls']} moving or static"
    if kind == "status_region":
        return f"what is the status of the object in the {rule['region']} region"
    if kind == "compare":
        return f"are there more {rule['cls_a']} objects than {rule['cls_b']} objects"
    if kind == "compare_region":
        return (
            f"are there more {rule['cls_a']} objects than {rule['cls_b']} objects"
            f" in the {rule['region']} region"
        )
    raise ValueError(f"unknown rule kind {kind!r}")


def gen_qa(scenario: Scenario, t: int, rng: np.random.Generator) -> list[QAItem]:
    """One item per (category, hop) whose applicability condition holds."""
    if not 0 <= t < len(scenario.grids):
        raise ValueError(f"frame {t} out of range")
    names = scenario.cfg.classes.names
    occ_names = list(names[1:])
    ego = scenario.ego_positions[t]
    regions_present = sorted({object_region(o, t, ego) for o in scenario.objects},
                             key=REGION_ORDER.index)

    def pick(seq):
        return seq[int(rng.integers(0, len(seq)))]

    candidates: list[tuple[str, str, dict]] = []
    candidates.append(("existence", "h0", {"kind": "exist", "cls": pick(occ_names)}))
    if regions_present:
        candidates.append(("existence", "h1",
                           {"kind": "exist_region", "cls": pick(occ_names),
                            "region": pick(regions_present)}))
    candidates.append(("counting", "h0", {"kind": "count", "cls": pick(occ_names)}))
    if regions_present:
        candidates.append(("counting", "h1",
                           {"kind": "count_region", "cls": pick(occ_names),
                            "region": pick(regions_present)}))

    if scenario.objects:
        volumes = sorted(o.size[0] * o.size[1] * o.size[2] for o in scenario.objects)
        if len(volumes) == 1 or volumes[-1] != volumes[-2]:
            candidates.append(("query-object", "h0", {"kind": "largest_object"}))
    single_regions = [r for r in regions_present if len(_objects_in_region(scenario, t, r)) == 1]
    if single_regions:
        candidates.append(("query-object", "h1",
                           {"kind": "object_region", "region": pick(single_regions)}))

    unique_classes = [c for c in occ_names if len(_objects_of_class(scenario, c)) == 1]
    if unique_classes:
        candidates.append(("query-status", "h0", {"kind": "status_class", "cls": pick(unique_classes)}))
    if single_regions:
        candidates.append(("query-status", "h1",
                           {"kind": "status_region", "region": pick(single_regions)}))

    a, b = pick(occ_names), pick(occ_names)
    while b == a:
        b = pick(occ_names)
    candidates.append(("comparison", "h0", {"kind": "compare", "cls_a": a, "cls_b": b}))
    if regions_present:
        candidates.append(("comparison", "h1",
                           {"kind": "compare_region", "cls_a": a, "cls_b": b,
                            "region": pick(regions_present)}))

    items = []
    for category, hop, rule in candidates:
        items.append(QAItem(
            question=_question_text(rule),
            answer=answer_rule(scenario, t, rule),
            category=category,
            hop=hop,
            rule=rule,
            frame=t,
        ))
    return items
