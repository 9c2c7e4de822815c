"""World model: mixed-mask law, forward contracts, Alg.-1 generation
structure, objectives, adapters, checkpoint resume."""

import numpy as np
import pytest

from occwm.nn import no_grad
from occwm.vocab import (
    UnifiedVocabulary,
    build_vocabulary,
    fit_action_bins,
    parse_generated,
    serialize_episode,
)
from occwm.wm import (
    MixedMaskSpec,
    PretrainConfig,
    WorldModel,
    WorldModelConfig,
    build_mixed_mask,
    caption_objective_loss,
    episode_training_arrays,
    generate,
    instruction_tune,
    next_scene,
    next_token,
    pretrain,
    wm_objective_loss,
)
from occwm.wm.generate import GenerationState
from occwm.wm.training import (
    TuneConfig,
    load_pretrain_checkpoint,
    save_pretrain_checkpoint,
)

S = 4  # tiny scene length for fast tests


@pytest.fixture(scope="module")
def vocab():
    binner = fit_action_bins([[(-1.0, -1.0), (1.0, 1.0)]], num_bins=8)
    return build_vocabulary(["go forward now", "yes no"], scene_size=12,
                            binner=binner, scene_len=S)


@pytest.fixture(scope="module")
def model(vocab):
    cfg = WorldModelConfig(layers=2, heads=2, d_model=32, max_len=128, scene_len=S,
                           scene_rows=2, scene_cols=2, vocab_total=vocab.total)
    return WorldModel(cfg, np.random.default_rng(0))


def episode(vocab, n_frames=2, history=1, seed=0, mode="world_model", **kw):
    rng = np.random.default_rng(seed)
    frames = [(rng.integers(0, vocab.scene.size, size=S), (0.25, -0.25))
              for _ in range(n_frames)]
    return serialize_episode(frames, vocab, mode=mode, history=history, **kw)


# ---- mask law ----

def attend_rule(i, j, spans, spatial):
    if j <= i:
        return True
    return spatial and any(s <= i < e and s <= j < e for s, e in spans)


def test_mask_no_spans_is_causal():
    mask = build_mixed_mask(MixedMaskSpec(3, ()))
    np.testing.assert_array_equal(mask, np.tril(np.ones((3, 3), dtype=bool)))


def test_mask_span_example():
    mask = build_mixed_mask(MixedMaskSpec(4, ((1, 3),)))
    assert mask[1][2]       # in-span forward
    assert not mask[1][3]   # beyond the span
    assert mask[3][1]       # ordinary causal
    assert all(mask[i][i] for i in range(4))


def test_mask_exhaustive_rule_small():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = int(rng.integers(1, 24))
        spans = []
        pos = 0
        while pos + 2 < t and rng.random() < 0.6:
            start = pos + int(rng.integers(0, 3))
            end = start + int(rng.integers(2, 5))
            if end > t:
                break
            spans.append((start, end))
            pos = end
        for spatial in (True, False):
            mask = build_mixed_mask(MixedMaskSpec(t, tuple(spans)), spatial)
            for i in range(t):
                for j in range(t):
                    assert mask[i, j] == attend_rule(i, j, spans, spatial)


def test_mask_spatial_off_equals_causal():
    spec = MixedMaskSpec(16, ((2, 6), (8, 12)))
    np.testing.assert_array_equal(
        build_mixed_mask(spec, spatial_attention=False),
        np.tril(np.ones((16, 16), dtype=bool)),
    )


def test_mask_overlapping_spans_rejected():
    with pytest.raises(ValueError):
        MixedMaskSpec(10, ((1, 5), (4, 8)))


# ---- forward ----

def test_forward_shape(model, vocab):
    toks = np.arange(10) % vocab.total
    logits = model.forward(toks)
    assert logits.shape == (10, vocab.total)


def test_forward_causal_perturbation(model, vocab):
    ep = episode(vocab, n_frames=2, history=1)
    with no_grad():
        base = model.forward(ep.tokens, ep.scene_spans).data.copy()
    # change the final token (outside every span): logits before it must not move
    mutated = ep.tokens.copy()
    mutated[-1] = (mutated[-1] + 1) % vocab.total
    with no_grad():
        pert = model.forward(mutated, ep.scene_spans).data
    np.testing.assert_array_equal(base[:-1], pert[:-1])


def test_forward_in_span_bidirectional(model, vocab):
    ep = episode(vocab, n_frames=1, history=0)
    s, e = ep.scene_spans[0]
    mutated = ep.tokens.copy()
    mutated[e - 1] = vocab.scene_id((vocab.scene_code(mutated[e - 1]) + 1) % vocab.scene.size)
    with no_grad():
        base = model.forward(ep.tokens, ep.scene_spans).data
        pert = model.forward(mutated, ep.scene_spans).data
    assert np.abs(base[s] - pert[s]).max() > 0  # earlier in-span position sees the change


def test_forward_spatial_off_is_pure_causal(vocab):
    cfg = WorldModelConfig(layers=2, heads=2, d_model=32, max_len=128, scene_len=S,
                           scene_rows=2, scene_cols=2, vocab_total=vocab.total,
                           spatial_attention=False)
    m = WorldModel(cfg, np.random.default_rng(0))
    ep = episode(vocab, n_frames=1, history=0)
    s, e = ep.scene_spans[0]
    mutated = ep.tokens.copy()
    mutated[e - 1] = vocab.scene_id((vocab.scene_code(mutated[e - 1]) + 1) % vocab.scene.size)
    with no_grad():
        base = m.forward(ep.tokens, ep.scene_spans).data
        pert = m.forward(mutated, ep.scene_spans).data
    np.testing.assert_array_equal(base[: e - 1], pert[: e - 1])


def test_forward_length_overflow(model, vocab):
    with pytest.raises(ValueError):
        model.forward(np.zeros(model.cfg.max_len + 1, dtype=np.int64))


# ---- generation ----

def test_next_token_deterministic_greedy(model, vocab):
    st1 = GenerationState(tokens=[vocab.special_id("<bos>")], scene_spans=[])
    st2 = GenerationState(tokens=[vocab.special_id("<bos>")], scene_spans=[])
    assert next_token(st1, model, vocab) == next_token(st2, model, vocab)


def test_temperature_zero_equals_greedy(vocab):
    cfg = WorldModelConfig(layers=1, heads=2, d_model=32, max_len=64, scene_len=S,
                           scene_rows=2, scene_cols=2, vocab_total=vocab.total,
                           sampling="temperature", temperature=1e-9)
    m = WorldModel(cfg, np.random.default_rng(3))
    st = GenerationState(tokens=[vocab.special_id("<bos>")], scene_spans=[])
    tok_sampled = next_token(st, m, vocab, rng=np.random.default_rng(0))
    greedy_cfg = WorldModelConfig(**{**m._config_dict(), "sampling": "greedy"})
    mg = WorldModel(greedy_cfg, np.random.default_rng(3))
    stg = GenerationState(tokens=[vocab.special_id("<bos>")], scene_spans=[])
    assert tok_sampled == next_token(stg, mg, vocab)


def test_next_scene_structure(model, vocab):
    st = GenerationState(tokens=[vocab.special_id("<bos>"), vocab.special_id("<occ>")],
                         scene_spans=[])
    picked = next_scene(st, model, vocab)
    assert len(picked) == S
    assert all(p in vocab.scene for p in picked)
    assert st.tokens[-1] == vocab.special_id("</occ>")
    assert st.scene_spans == [(2, 2 + S)]


def test_next_scene_requires_occ(model, vocab):
    st = GenerationState(tokens=[vocab.special_id("<bos>")], scene_spans=[])
    with pytest.raises(ValueError):
        next_scene(st, model, vocab)


def test_generate_structure_well_formed(model, vocab):
    prompt = episode(vocab, n_frames=1, history=1, prompt_only=True)
    out = generate(model, vocab, prompt)
    assert len(out) <= model.cfg.max_len
    parsed = parse_generated(out.tokens, vocab)
    assert parsed.well_formed, parsed.diagnostics


def test_generate_budget_never_exceeded(model, vocab):
    prompt = episode(vocab, n_frames=1, history=1, prompt_only=True)
    out = generate(model, vocab, prompt, max_len=len(prompt) + 3)
    assert len(out) <= len(prompt) + 3
    assert out.meta["truncated"] or out.tokens[-1] == vocab.special_id("<eot_id>")


def test_generate_prompt_ending_in_occ_yields_scene_block(model, vocab):
    prompt = episode(vocab, n_frames=1, history=1, prompt_only=True)
    tokens = np.concatenate([prompt.tokens, [vocab.special_id("<occ>")]])
    from occwm.vocab import EpisodeSequence

    p2 = EpisodeSequence(tokens=tokens, scene_spans=prompt.scene_spans,
                         action_spans=prompt.action_spans,
                         loss_mask=np.zeros(len(tokens), dtype=bool),
                         meta=dict(prompt.meta))
    out = generate(model, vocab, p2, max_len=len(p2) + S + 2)
    start = len(p2)
    assert (start, start + S) in [tuple(s) for s in out.scene_spans]
    assert out.tokens[start + S] == vocab.special_id("</occ>")


# ---- objectives ----

def test_training_arrays_query_inputs(vocab, model):
    ep = episode(vocab, n_frames=3, history=1)
    inputs, a_idx, a_tgt, s_idx, s_tgt = episode_training_arrays(ep, vocab)
    queries = np.array(vocab.query_ids())
    for s, e in ep.supervised_scene_spans():
        np.testing.assert_array_equal(inputs[s:e], queries)
        np.testing.assert_array_equal(ep.tokens[s:e], a_tgt[(a_idx >= s) & (a_idx < e)])
    hist_s, hist_e = ep.scene_spans[0]
    np.testing.assert_array_equal(inputs[hist_s:hist_e], ep.tokens[hist_s:hist_e])


def test_wm_loss_perfect_logits_near_zero(vocab):
    """A model copy whose embedding yields one-hot-like logits on the target."""
    ep = episode(vocab, n_frames=2, history=1)
    inputs, a_idx, a_tgt, s_idx, s_tgt = episode_training_arrays(ep, vocab)

    class Oracle:
        cfg = None

        def forward(self, toks, spans, adapters=None):
            from occwm.nn import Tensor

            logits = np.full((len(toks), vocab.total), -1e4, dtype=np.float32)
            for idx, tgt in zip(a_idx, a_tgt):
                logits[idx, tgt] = 1e4
            for idx, tgt in zip(s_idx, s_tgt):
                logits[idx, tgt] = 1e4
            return Tensor(logits)

    loss = wm_objective_loss(Oracle(), [ep], vocab)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-6)


def test_wm_loss_equals_masked_cross_entropy(model, vocab):
    ep = episode(vocab, n_frames=2, history=1)
    inputs, a_idx, a_tgt, s_idx, s_tgt = episode_training_arrays(ep, vocab)
    with no_grad():
        logits = model.forward(inputs, ep.scene_spans).data.astype(np.float64)
    logp = logits - np.log(np.sum(np.exp(logits - logits.max(1, keepdims=True)), axis=1,
                                  keepdims=True)) - logits.max(1, keepdims=True)
    picked = [logp[i, t] for i, t in zip(a_idx, a_tgt)] + [logp[i, t] for i, t in zip(s_idx, s_tgt)]
    expected = -float(np.mean(picked))
    loss = wm_objective_loss(model, [ep], vocab)
    assert float(loss.data) == pytest.approx(expected, rel=1e-4)


def test_caption_loss_ignores_prompt(model, vocab):
    rng = np.random.default_rng(0)
    frames = [(rng.integers(0, vocab.scene.size, size=S), None)]
    ep = serialize_episode(frames, vocab, prompt_text="go forward", target_text="yes",
                           mode="caption")
    inputs, a_idx, _, s_idx, _ = episode_training_arrays(ep, vocab)
    assert a_idx.size == 0
    ans_pos = int(np.nonzero(ep.tokens == vocab.special_id("<ans>"))[0][0])
    assert s_idx.min() >= ans_pos
    loss = caption_objective_loss(model, [ep], vocab)
    assert np.isfinite(float(loss.data))


def test_batch_loss_is_mean_of_episode_losses(model, vocab):
    eps = [episode(vocab, seed=i, n_frames=2, history=1) for i in range(3)]
    singles = [float(wm_objective_loss(model, [e], vocab).data) for e in eps]
    batch = float(wm_objective_loss(model, eps, vocab).data)
    assert batch == pytest.approx(np.mean(singles), rel=1e-5)


# ---- adapters ----

def test_zero_init_adapters_bit_identical(model, vocab):
    ep = episode(vocab, n_frames=1, history=0)
    adapters = model.make_adapters(np.random.default_rng(1))
    with no_grad():
        base = model.forward(ep.tokens, ep.scene_spans).data
        with_ad = model.forward(ep.tokens, ep.scene_spans, adapters).data
    assert base.tobytes() == with_ad.tobytes()


def test_merged_equals_adapter_forward(model, vocab):
    rng = np.random.default_rng(2)
    adapters = model.make_adapters(rng)
    for ad in adapters.values():
        ad.b.data = rng.standard_normal(ad.b.shape).astype(np.float32) * 0.05
    merged = model.merge_adapters(adapters)
    ep = episode(vocab, n_frames=1, history=0)
    with no_grad():
        via_adapter = model.forward(ep.tokens, ep.scene_spans, adapters).data
        via_merged = merged.forward(ep.tokens, ep.scene_spans).data
    scale = max(np.abs(via_adapter).max(), 1.0)
    assert np.abs(via_adapter - via_merged).max() / scale <= 1e-5


def test_instruction_tune_freezes_base(model, vocab):
    rng = np.random.default_rng(0)
    frames = [(rng.integers(0, vocab.scene.size, size=S), None)]
    eps = [serialize_episode(frames, vocab, prompt_text="go", target_text="yes", mode="qa")]
    before = {k: p.data.copy() for k, p in model.params.items()}
    adapters, log = instruction_tune(model, eps, vocab,
                                     TuneConfig(steps=3, batch_size=1, seed=0))
    for k, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert len(log) == 3
    assert any(not np.array_equal(ad.b.data, np.zeros_like(ad.b.data))
               for ad in adapters.values())


# ---- pretraining & persistence ----

def test_pretrain_runs_and_interleaves(model, vocab, tmp_path):
    wm_eps = [episode(vocab, seed=i, n_frames=2, history=1) for i in range(3)]
    rng = np.random.default_rng(0)
    cap_eps = [serialize_episode([(rng.integers(0, vocab.scene.size, size=S), None)],
                                 vocab, prompt_text="go", target_text="yes", mode="caption")
               for _ in range(2)]
    cfg = WorldModelConfig(layers=1, heads=2, d_model=32, max_len=128, scene_len=S,
                           scene_rows=2, scene_cols=2, vocab_total=vocab.total)
    m = WorldModel(cfg, np.random.default_rng(5))
    opt, log = pretrain(m, wm_eps, cap_eps, vocab, PretrainConfig(steps=4, batch_size=2, seed=0))
    assert [r["objective"] for r in log] == ["world_model", "caption"] * 2
    assert all(np.isfinite(r["loss"]) for r in log)


def test_checkpoint_resume_bit_exact(vocab, tmp_path):
    wm_eps = [episode(vocab, seed=i, n_frames=2, history=1) for i in range(3)]
    cfg = WorldModelConfig(layers=1, heads=2, d_model=32, max_len=128, scene_len=S,
                           scene_rows=2, scene_cols=2, vocab_total=vocab.total)

    m1 = WorldModel(cfg, np.random.default_rng(5))
    opt1, log_a = pretrain(m1, wm_eps, [], vocab, PretrainConfig(steps=3, batch_size=2, seed=7))
    ckpt = tmp_path / "state.ckpt"
    save_pretrain_checkpoint(ckpt, m1, opt1, 3)
    _, log_b = pretrain(m1, wm_eps, [], vocab, PretrainConfig(steps=1, batch_size=2, seed=7),
                        optimizer=opt1, start_step=3)

    m2, opt2, next_step, _ = load_pretrain_checkpoint(ckpt)
    assert next_step == 3
    _, log_c = pretrain(m2, wm_eps, [], vocab, PretrainConfig(steps=1, batch_size=2, seed=7),
                        optimizer=opt2, start_step=3)
    assert log_b[0]["loss"] == log_c[0]["loss"]  # bit-exact resume
