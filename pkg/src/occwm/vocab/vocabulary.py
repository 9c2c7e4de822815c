"""Unified occupancy-language-action vocabulary.

One contiguous id space with four segments: text words first, then scene
codes (order-preserving with the codebook), then action bins (x axis then
y axis), then the special/functional tokens, including one scene query
token per scene position.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .actions import ActionBinner

UNK = "<unk>"
# always available so waypoints can be spelled out as text in a.t.-off mode
GUARANTEED_TEXT = tuple("0123456789") + (".", "-", "+")

CORE_SPECIALS = ("<bos>", "<eot_id>", "<pad>", "<occ>", "</occ>", "<act>", "</act>", "<ans>")


@dataclass(frozen=True)
class Segment:
    start: int
    stop: int

    def __contains__(self, vid: int) -> bool:
        return self.start <= vid < self.stop

    @property
    def size(self) -> int:
        return self.stop - self.start


class UnifiedVocabulary:
    """Bijective map over [0, total): text | scene | action | specials."""

    def __init__(self, words: list[str], scene_size: int, binner: ActionBinner, scene_len: int):
        if scene_size < 1:
            raise ValueError("scene segment must be nonempty")
        self.words = list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        if len(self.word_to_id) != len(self.words):
            raise ValueError("duplicate words in text segment")
        if UNK not in self.word_to_id:
            raise ValueError("text segment must contain <unk>")
        self.binner = binner
        self.scene_len = int(scene_len)

        special_names = list(CORE_SPECIALS) + [f"<que_{i}>" for i in range(scene_len)]
        if len(set(special_names)) != len(special_names):
            raise ValueError("duplicate special names")

        t = len(self.words)
        s = scene_size
        a = 2 * binner.num_bins
        self.text = Segment(0, t)
        self.scene = Segment(t, t + s)
        self.action = Segment(t + s, t + s + a)
        self.special = Segment(t + s + a, t + s + a + len(special_names))
        self.total = self.special.stop
        self.special_names = special_names
        self.specials = {name: self.special.start + i for i, name in enumerate(special_names)}

    # ---- id algebra ----

    def scene_id(self, code: int) -> int:
        if not 0 <= code < self.scene.size:
            raise ValueError(f"codebook id {code} out of range")
        return self.scene.start + code

    def scene_code(self, vid: int) -> int:
        if vid not in self.scene:
            raise ValueError(f"id {vid} is not a scene token")
        return vid - self.scene.start

    def action_ids(self, xbin: int, ybin: int) -> tuple[int, int]:
        n = self.binner.num_bins
        if not (0 <= xbin < n and 0 <= ybin < n):
            raise ValueError("action bin out of range")
        return (self.action.start + xbin, self.action.start + n + ybin)

    def action_axis_bin(self, vid: int) -> tuple[str, int]:
        if vid not in self.action:
            raise ValueError(f"id {vid} is not an action token")
        local = vid - self.action.start
        n = self.binner.num_bins
        return ("x", local) if local < n else ("y", local - n)

    def special_id(self, name: str) -> int:
        return self.specials[name]

    def query_ids(self) -> list[int]:
        return [self.specials[f"<que_{i}>"] for i in range(self.scene_len)]

    def segment_of(self, vid: int) -> str:
        for name in ("text", "scene", "action", "special"):
            if vid in getattr(self, name):
                return name
        raise ValueError(f"id {vid} outside vocabulary of size {self.total}")

    def describe(self, vid: int) -> str:
        seg = self.segment_of(vid)
        if seg == "text":
            return self.words[vid]
        if seg == "scene":
            return f"scene:{vid - self.scene.start}"
        if seg == "action":
            axis, b = self.action_axis_bin(vid)
            return f"act:{axis}{b}"
        return self.special_names[vid - self.special.start]

    # ---- text tokenization (toy word-level stand-in) ----

    def text_tokenize(self, s: str) -> list[int]:
        unk = self.word_to_id[UNK]
        return [self.word_to_id.get(w, unk) for w in s.lower().split()]

    def text_detokenize(self, ids) -> str:
        out = []
        for vid in ids:
            if vid not in self.text:
                raise ValueError(f"id {vid} is not a text token")
            out.append(self.words[vid])
        return " ".join(out)

    # ---- persistence ----

    def to_json(self) -> dict:
        return {
            "words": self.words,
            "scene_size": self.scene.size,
            "scene_len": self.scene_len,
            "bin_edges": {"x": self.binner.edges_x.tolist(), "y": self.binner.edges_y.tolist()},
            "bin_centers": {"x": self.binner.centers_x.tolist(), "y": self.binner.centers_y.tolist()},
            "specials": self.specials,
            "segments": {
                "text": [self.text.start, self.text.stop],
                "scene": [self.scene.start, self.scene.stop],
                "action": [self.action.start, self.action.stop],
                "special": [self.special.start, self.special.stop],
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, blob: dict) -> "UnifiedVocabulary":
        binner = ActionBinner(
            edges_x=np.asarray(blob["bin_edges"]["x"], dtype=np.float64),
            edges_y=np.asarray(blob["bin_edges"]["y"], dtype=np.float64),
            centers_x=np.asarray(blob["bin_centers"]["x"], dtype=np.float64),
            centers_y=np.asarray(blob["bin_centers"]["y"], dtype=np.float64),
        )
        return cls(blob["words"], blob["scene_size"], binner, blob["scene_len"])

    @classmethod
    def load(cls, path) -> "UnifiedVocabulary":
        with open(path) as f:
            return cls.from_json(json.load(f))


def build_vocabulary(
    corpus: list[str],
    scene_size: int,
    binner: ActionBinner,
    scene_len: int,
    max_words: int = 512,
) -> UnifiedVocabulary:
    """Text segment = corpus word types by (frequency desc, word asc), capped
    at max_words, plus <unk> and the guaranteed digit/sign tokens."""
    if not corpus:
        raise ValueError("empty corpus")
    counts = Counter()
    for line in corpus:
        counts.update(line.lower().split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[:max_words]]
    words.append(UNK)
    for extra in GUARANTEED_TEXT:
        if extra not in counts or extra not in words:
            if extra not in words:
                words.append(extra)
    return UnifiedVocabulary(words, scene_size, binner, scene_len)
