"""Unified vocabulary, action binning, episode round trips, tolerant parsing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occwm.vocab import (
    GUARANTEED_TEXT,
    UNK,
    UnifiedVocabulary,
    action_detokenize,
    action_tokenize,
    build_vocabulary,
    episode_from_json,
    episode_to_json,
    fit_action_bins,
    parse_generated,
    serialize_episode,
)

S = 16
CORPUS = [
    "how many cars are there",
    "the scene is empty",
    "a static car in the front left region",
    "yes no moving static",
]


@pytest.fixture(scope="module")
def binner():
    traj = [[(-1.0 + 2 * i / 63, -0.5 + 1.0 * i / 63) for i in range(64)]]
    return fit_action_bins(traj, num_bins=16)


@pytest.fixture(scope="module")
def vocab(binner):
    return build_vocabulary(CORPUS, scene_size=32, binner=binner, scene_len=S)


# ---- vocabulary structure ----

def test_segments_partition_id_space(vocab):
    assert vocab.text.start == 0
    assert vocab.scene.start == vocab.text.stop
    assert vocab.action.start == vocab.scene.stop
    assert vocab.special.start == vocab.action.stop
    assert vocab.special.stop == vocab.total


def test_segment_roundtrip_is_identity(vocab):
    for vid in range(vocab.total):
        seg = vocab.segment_of(vid)
        if seg == "scene":
            assert vocab.scene_id(vocab.scene_code(vid)) == vid
        elif seg == "action":
            axis, b = vocab.action_axis_bin(vid)
            n = vocab.binner.num_bins
            back = vocab.action.start + (b if axis == "x" else n + b)
            assert back == vid
        elif seg == "special":
            assert vocab.special_id(vocab.special_names[vid - vocab.special.start]) == vid
        else:
            assert vocab.word_to_id[vocab.words[vid]] == vid


def test_scene_offset_law(vocab):
    for j in (0, 1, 17, 31):
        assert vocab.scene_id(j) == vocab.text.size + j


def test_scene_mapping_order_preserving(vocab):
    ids = [vocab.scene_id(j) for j in range(vocab.scene.size)]
    assert ids == sorted(ids)
    assert ids[0] == vocab.scene.start


def test_empty_corpus_rejected(binner):
    with pytest.raises(ValueError):
        build_vocabulary([], scene_size=8, binner=binner, scene_len=S)


def test_unk_and_digits_present(vocab):
    assert UNK in vocab.word_to_id
    for ch in GUARANTEED_TEXT:
        assert ch in vocab.word_to_id


def test_word_frequency_order():
    v = build_vocabulary(["b b b a a c", "a"], scene_size=4,
                         binner=fit_action_bins([[(0.0, 0.0), (1.0, 1.0)]], 4), scene_len=4)
    # a: 3, b: 3, c: 1 -> frequency desc then lexicographic
    assert v.words[:3] == ["a", "b", "c"]


def test_query_tokens_distinct_and_contiguous(vocab):
    qids = vocab.query_ids()
    assert len(set(qids)) == S
    assert qids == list(range(qids[0], qids[0] + S))


def test_text_tokenize_roundtrip(vocab):
    assert vocab.text_tokenize("") == []
    sent = "how many cars are there"
    assert vocab.text_detokenize(vocab.text_tokenize(sent)) == sent
    ids = vocab.text_tokenize("how many zebras are there")
    assert vocab.word_to_id[UNK] in ids


def test_vocab_json_roundtrip(vocab, tmp_path):
    path = tmp_path / "vocab.json"
    vocab.save(path)
    back = UnifiedVocabulary.load(path)
    assert back.total == vocab.total
    assert back.words == vocab.words
    assert back.specials == vocab.specials
    np.testing.assert_allclose(back.binner.centers_x, vocab.binner.centers_x)


# ---- action binning ----

def test_uniform_bins_centers():
    b = fit_action_bins([[(-1.0, -1.0), (1.0, 1.0)]], num_bins=4)
    np.testing.assert_allclose(b.centers_x, [-0.75, -0.25, 0.25, 0.75], atol=1e-5)


def test_degenerate_axis_rejected():
    with pytest.raises(ValueError):
        fit_action_bins([[(0.5, -1.0), (0.5, 1.0)]], num_bins=4)


def test_all_training_points_fall_in_some_bin():
    rng = np.random.default_rng(0)
    pts = [[(float(a), float(b)) for a, b in rng.uniform(-2, 2, size=(50, 2))]]
    binner = fit_action_bins(pts, num_bins=8)
    for traj in pts:
        for x, y in traj:
            assert binner.edges_x[0] <= x <= binner.edges_x[-1]
            assert binner.edges_y[0] <= y <= binner.edges_y[-1]


def test_action_tokenize_known_bin(vocab):
    b = fit_action_bins([[(-1.0, -1.0), (1.0, 1.0)]], num_bins=4)
    v = build_vocabulary(CORPUS, scene_size=8, binner=b, scene_len=4)
    ax, ay = action_tokenize((0.3, 0.3), v)
    assert v.action_axis_bin(ax) == ("x", 2)  # nearest center 0.25
    assert v.action_axis_bin(ay) == ("y", 2)


def test_action_roundtrip_exact_at_centers(vocab):
    b = vocab.binner
    for i in (0, 3, 7, 15):
        wp = (float(b.centers_x[i]), float(b.centers_y[i]))
        back = action_detokenize(action_tokenize(wp, vocab), vocab)
        assert back == pytest.approx(wp, abs=1e-12)


def test_action_roundtrip_error_bounded(vocab):
    rng = np.random.default_rng(1)
    hx, hy = vocab.binner.half_width("x"), vocab.binner.half_width("y")
    lo_x, hi_x = vocab.binner.edges_x[0], vocab.binner.edges_x[-1]
    lo_y, hi_y = vocab.binner.edges_y[0], vocab.binner.edges_y[-1]
    for _ in range(500):
        wp = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
        dx, dy = action_detokenize(action_tokenize(wp, vocab), vocab)
        assert abs(dx - wp[0]) <= hx + 1e-9
        assert abs(dy - wp[1]) <= hy + 1e-9


def test_action_detokenize_rejects_wrong_order(vocab):
    ax, ay = action_tokenize((0.0, 0.0), vocab)
    with pytest.raises(ValueError):
        action_detokenize([ay, ax], vocab)
    with pytest.raises(ValueError):
        action_detokenize([vocab.special_id("<bos>"), ay], vocab)


# ---- episodes ----

def frame(vocab, seed=0, waypoint=(0.3, -0.2)):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, vocab.scene.size, size=S), waypoint)


def test_single_frame_token_count(vocab):
    ep = serialize_episode([frame(vocab)], vocab, mode="world_model", history=0)
    assert len(ep) == 1 + (S + 2) + 4 + 1


def test_serialize_parse_roundtrip(vocab):
    frames = [frame(vocab, seed=i) for i in range(3)]
    ep = serialize_episode(frames, vocab, mode="world_model", history=1)
    parsed = parse_generated(ep.tokens, vocab)
    assert parsed.well_formed
    assert len(parsed.scenes) == 3
    for (scene, wp), got_scene, got_wp in zip(frames, parsed.scenes, parsed.trajectory):
        np.testing.assert_array_equal(scene, got_scene)
        snapped = action_detokenize(action_tokenize(wp, vocab), vocab)
        assert got_wp == pytest.approx(snapped, abs=1e-9)


def test_loss_mask_false_on_history(vocab):
    frames = [frame(vocab, seed=i) for i in range(3)]
    ep = serialize_episode(frames, vocab, mode="world_model", history=2)
    first_future_occ = ep.scene_spans[2][0] - 1
    assert not ep.loss_mask[:first_future_occ].any()
    assert ep.loss_mask[first_future_occ]


def test_closing_occ_never_supervised(vocab):
    ep = serialize_episode([frame(vocab, seed=i) for i in range(2)], vocab,
                           mode="world_model", history=0)
    occ_end = vocab.special_id("</occ>")
    for pos in np.nonzero(ep.tokens == occ_end)[0]:
        assert not ep.loss_mask[pos]


def test_caption_mode_supervises_answer_only(vocab):
    ep = serialize_episode([ (frame(vocab)[0], None) ], vocab,
                           prompt_text="describe the scene",
                           target_text="a static car", mode="caption")
    ans = vocab.special_id("<ans>")
    ans_pos = int(np.nonzero(ep.tokens == ans)[0][0])
    assert not ep.loss_mask[: ans_pos + 1].any()
    assert ep.loss_mask[ans_pos + 1 :].all()
    assert ep.tokens[-1] == vocab.special_id("<eot_id>")


def test_action_as_text_roundtrip(vocab):
    frames = [frame(vocab, seed=4, waypoint=(-0.37, 0.82))]
    ep = serialize_episode(frames, vocab, mode="world_model", history=0, action_as_text=True)
    parsed = parse_generated(ep.tokens, vocab, action_as_text=True)
    assert parsed.well_formed
    assert parsed.trajectory[0] == pytest.approx((-0.37, 0.82), abs=0.005)


def test_parse_truncated_scene_block(vocab):
    ep = serialize_episode([frame(vocab)], vocab, mode="world_model", history=0)
    # drop one scene token from inside the block
    tokens = np.delete(ep.tokens, ep.scene_spans[0][0])
    parsed = parse_generated(tokens, vocab)
    assert any("truncated scene block" in d for d in parsed.diagnostics)
    assert len(parsed.scenes) == 0


def test_parse_answer_extraction(vocab):
    ep = serialize_episode([(frame(vocab)[0], None)], vocab, prompt_text="how many",
                           target_text="yes", mode="qa")
    parsed = parse_generated(ep.tokens, vocab)
    assert parsed.answer == "yes"


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=200), max_size=60))
def test_parser_never_crashes_on_fuzz(ids):
    traj = [[(-1.0, -1.0), (1.0, 1.0)]]
    v = build_vocabulary(CORPUS, scene_size=32, binner=fit_action_bins(traj, 16), scene_len=S)
    tokens = [t % v.total for t in ids]
    parse_generated(tokens, v)
    parse_generated(tokens, v, action_as_text=True)


def test_episode_json_roundtrip(vocab):
    ep = serialize_episode([frame(vocab, seed=i) for i in range(2)], vocab,
                           mode="world_model", history=1)
    back = episode_from_json(episode_to_json(ep))
    np.testing.assert_array_equal(back.tokens, ep.tokens)
    assert back.scene_spans == ep.scene_spans
    np.testing.assert_array_equal(back.loss_mask, ep.loss_mask)


def test_overlapping_spans_rejected(vocab):
    from occwm.vocab import EpisodeSequence

    with pytest.raises(ValueError):
        EpisodeSequence(
            tokens=np.zeros(10, dtype=np.int64),
            scene_spans=[(1, 5), (4, 8)],
            action_spans=[],
            loss_mask=np.zeros(10, dtype=bool),
        )
