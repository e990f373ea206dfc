import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_transformer
from spdlab.errors import InternalError, InvalidArgument
from spdlab.decoding import (DecodePolicy, DecodeTrace, SpecDecodeConfig, autoregressive_decode, draft_block,
                             exact_match_marginal_closed_form, first_token_marginal, prompt_lookup_decode,
                             prompt_lookup_draft, residual_distribution, residual_sample, speculative_decode,
                             top_p_filter, total_variation, verify_block)
from spdlab.models import EOS, TableLM, peaked_table_lm, random_table_lm

GREEDY = DecodePolicy("greedy", max_tokens=20)


def table_from(p_t, p_d):
    v = len(p_t)
    return (TableLM(0, v, {(): np.array(p_t, float)}), TableLM(0, v, {(): np.array(p_d, float)}))


class TestTopP:
    def test_identity_at_one(self):
        p = np.array([0.1, 0.6, 0.3])
        np.testing.assert_allclose(top_p_filter(p, 1.0), p, atol=1e-15)

    def test_keeps_two(self):
        np.testing.assert_allclose(top_p_filter([0.5, 0.3, 0.2], 0.7), [0.625, 0.375, 0.0], atol=1e-15)

    def test_first_alone_reaches_p(self):
        np.testing.assert_array_equal(top_p_filter([0.5, 0.3, 0.2], 0.5), [1.0, 0.0, 0.0])

    def test_ties_prefer_lower_id(self):
        np.testing.assert_array_equal(top_p_filter([0.25, 0.25, 0.25, 0.25], 0.25), [1.0, 0, 0, 0])
        np.testing.assert_array_equal(top_p_filter([0.2, 0.4, 0.4], 0.4), [0, 1.0, 0])

    @pytest.mark.parametrize("p", [0.0, -0.5, 1.01])
    def test_invalid_p(self, p):
        with pytest.raises(InvalidArgument):
            top_p_filter([0.5, 0.5], p)

    def test_unnormalized_input(self):
        with pytest.raises(InvalidArgument):
            top_p_filter([0.5, 0.6], 0.7)

    @settings(max_examples=200)
    @given(st.integers(2, 20), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
    def test_normalized_and_minimal(self, v, p, seed):
        probs = np.random.default_rng(seed).dirichlet(np.ones(v))
        out = top_p_filter(probs, p)
        assert abs(out.sum() - 1) <= 1e-12
        kept = out > 0
        assert probs[kept].sum() >= p - 1e-12
        # dropping the smallest kept token falls short of p (smallest prefix)
        if kept.sum() > 1:
            assert probs[kept].sum() - probs[kept].min() < p + 1e-12


class TestResidual:
    def test_single_token_residual(self):
        np.testing.assert_array_equal(residual_distribution([0.5, 0.3, 0.2], [0.2, 0.5, 0.3]), [1, 0, 0])
        np.testing.assert_array_equal(residual_distribution([0.6, 0.4], [0.4, 0.6]), [1, 0])

    def test_disjoint_support(self):
        rng = np.random.default_rng(0)
        assert {residual_sample([1.0, 0.0], [0.0, 1.0], rng) for _ in range(50)} == {0}

    def test_equal_distributions_fall_back_to_target(self):
        p = np.array([0.2, 0.5, 0.3])
        assert residual_distribution(p, p) is None
        rng = np.random.default_rng(3)
        counts = np.bincount([residual_sample(p, p, rng) for _ in range(20000)], minlength=3) / 20000
        np.testing.assert_allclose(counts, p, atol=0.02)

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_is_distribution_on_excess_support(self, v, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(v), size=2)
        res = residual_distribution(p, q)
        assert res is not None
        assert abs(res.sum() - 1) <= 1e-12
        assert np.all(res[p <= q] == 0)


class TestMarginals:
    P_T = [0.5, 0.3, 0.2]
    P_D = [0.2, 0.5, 0.3]

    def test_exact_match_worked_example(self):
        t, d = table_from(self.P_T, self.P_D)
        pol = DecodePolicy("top_p", p=1.0)
        m = first_token_marginal(t, d, [1], "paper_exact_match", pol)
        np.testing.assert_allclose(m, [0.79, 0.15, 0.06], atol=1e-12)
        np.testing.assert_allclose(exact_match_marginal_closed_form(self.P_T, self.P_D), m, atol=1e-12)
        assert total_variation(m, self.P_T) == pytest.approx(0.29, abs=1e-12)

    def test_standard_ratio_recovers_target(self):
        t, d = table_from(self.P_T, self.P_D)
        m = first_token_marginal(t, d, [1], "standard_ratio", DecodePolicy("top_p", p=1.0))
        np.testing.assert_allclose(m, self.P_T, atol=1e-12)

    def test_exact_match_with_equal_uniform_models(self):
        t, _ = table_from([0.25] * 4, [0.25] * 4)
        m = first_token_marginal(t, t, [1], "paper_exact_match", DecodePolicy("top_p", p=1.0))
        np.testing.assert_allclose(m, [0.25] * 4, atol=1e-12)

    def test_exact_match_with_equal_peaked_models_is_biased(self):
        # no residual mass, so rejections resample p itself: p^2 + (1 - sum p^2) p
        p = np.array(self.P_T)
        t, _ = table_from(p, p)
        m = first_token_marginal(t, t, [1], "paper_exact_match", DecodePolicy("top_p", p=1.0))
        np.testing.assert_allclose(m, [0.56, 0.276, 0.164], atol=1e-12)
        np.testing.assert_allclose(m, p * p + (1 - (p * p).sum()) * p, atol=1e-15)

    def test_non_table_rejected(self):
        t, _ = table_from(self.P_T, self.P_D)
        with pytest.raises(InvalidArgument):
            first_token_marginal(tiny_transformer(3), t, [1], "standard_ratio", GREEDY)

    def test_unknown_rule(self):
        t, d = table_from(self.P_T, self.P_D)
        with pytest.raises(InvalidArgument):
            first_token_marginal(t, d, [1], "coin_flip", DecodePolicy("top_p", p=1.0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 16), st.sampled_from([0.7, 1.0]), st.floats(0.3, 2.0), st.integers(0, 2**32 - 1))
    def test_standard_ratio_equivalence_under_top_p(self, v, p, temp, seed):
        rng = np.random.default_rng(seed)
        t, d = random_table_lm(rng, v), random_table_lm(rng, v)
        pol = DecodePolicy("top_p", p=p, temperature=temp)
        ctx = [int(rng.integers(v))]
        m = first_token_marginal(t, d, ctx, "standard_ratio", pol)
        target = pol.distribution(np.log(t.next_distribution(ctx)))
        assert np.max(np.abs(m - target)) <= 1e-12


class TestAutoregressive:
    def test_one_hot_table_walk_same_in_both_modes(self):
        model = peaked_table_lm(np.random.default_rng(0), 10, leak=0.0 + 1e-300)
        prompt = [4]
        greedy, _ = autoregressive_decode(model, prompt, DecodePolicy("greedy", max_tokens=15, stop_at_eos=False))
        sampled, _ = autoregressive_decode(model, prompt, DecodePolicy("top_p", p=0.7, max_tokens=15, seed=9,
                                                                       stop_at_eos=False))
        walk, ctx = [], prompt[-1]
        for _ in range(15):
            ctx = int(np.argmax(model.rows[(ctx,)]))
            walk.append(ctx)
        assert greedy == sampled == walk

    def test_zero_budget(self):
        out, trace = autoregressive_decode(tiny_transformer(), [1, 4], DecodePolicy(max_tokens=0))
        assert out == [] and trace.target_calls == 0

    def test_seeded_sampling_repeats(self):
        model = tiny_transformer()
        pol = DecodePolicy("top_p", p=0.9, max_tokens=20, seed=5, stop_at_eos=False)
        assert autoregressive_decode(model, [1, 3], pol)[0] == autoregressive_decode(model, [1, 3], pol)[0]

    def test_context_overflow(self):
        model = tiny_transformer(max_context=8)
        with pytest.raises(InvalidArgument):
            autoregressive_decode(model, [1] * 6, DecodePolicy(max_tokens=4))
        with pytest.raises(InvalidArgument):
            autoregressive_decode(model, [], DecodePolicy(max_tokens=1))

    def test_stops_at_eos(self):
        rows = {(t,): np.eye(5)[EOS] for t in range(5)}
        out, _ = autoregressive_decode(TableLM(1, 5, rows), [1], DecodePolicy(max_tokens=10))
        assert out == [EOS]


class TestVerify:
    def test_identical_one_hot_accepts_all_and_adds_bonus(self):
        model = peaked_table_lm(np.random.default_rng(1), 6, leak=1e-300)
        tokens, dists = draft_block(model, [2], 3, GREEDY)
        k, nxt, tdists = verify_block(model, [2], tokens, dists, GREEDY, SpecDecodeConfig())
        assert k == 3 and len(tdists) == 4
        assert nxt == int(np.argmax(tdists[3]))

    def test_immediate_greedy_reject(self):
        target, _ = table_from([0.1, 0.7, 0.2], [0.1, 0.7, 0.2])
        k, nxt, _ = verify_block(target, [0], [2, 2], [np.eye(3)[2]] * 2, GREEDY, SpecDecodeConfig(2))
        assert (k, nxt) == (0, 1)

    def test_no_bonus(self):
        model = peaked_table_lm(np.random.default_rng(1), 6, leak=1e-300)
        tokens, dists = draft_block(model, [2], 2, GREEDY)
        k, nxt, _ = verify_block(model, [2], tokens, dists, GREEDY, SpecDecodeConfig(2, bonus=False))
        assert (k, nxt) == (2, None)

    def test_one_target_call_per_block(self):
        target = tiny_transformer(seed=1)
        sess = target.session()
        draft = tiny_transformer(seed=2)
        tokens, dists = draft_block(draft, [1, 5], 4, GREEDY)
        verify_block(sess, [1, 5], tokens, dists, GREEDY, SpecDecodeConfig(4))
        assert sess.calls == 1

    def test_zero_draft_probability_is_internal_error(self):
        target, _ = table_from([0.5, 0.5], [0.5, 0.5])
        pol = DecodePolicy("top_p", p=1.0)
        with pytest.raises(InternalError):
            verify_block(target, [0], [1], [np.array([1.0, 0.0])], pol, SpecDecodeConfig(1))


def check_conservation(trace: DecodeTrace, out):
    assert trace.conserved()
    assert trace.tokens_emitted == len(out)
    assert 0.0 <= trace.acceptance_rate <= 1.0


class TestSpeculative:
    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_greedy_matches_autoregressive(self, n):
        target, draft = tiny_transformer(seed=3), tiny_transformer(seed=4)
        pol = DecodePolicy("greedy", max_tokens=30, stop_at_eos=False)
        ref, _ = autoregressive_decode(target, [1, 6, 2, 7], pol)
        out, trace = speculative_decode(target, draft, [1, 6, 2, 7], SpecDecodeConfig(n), pol)
        assert out == ref
        check_conservation(trace, out)

    def test_self_draft_accepts_everything(self):
        model = tiny_transformer(seed=5)
        pol = DecodePolicy("greedy", max_tokens=24, stop_at_eos=False)
        out, trace = speculative_decode(model, model, [1, 2], SpecDecodeConfig(3), pol)
        assert trace.acceptance_rate == 1.0
        assert trace.target_calls == math.ceil(24 / 4)
        check_conservation(trace, out)

    def test_adversarial_draft_still_lossless(self):
        rng = np.random.default_rng(11)
        target = peaked_table_lm(rng, 9, leak=1e-6)
        draft = random_table_lm(rng, 9)
        pol = DecodePolicy("greedy", max_tokens=40, stop_at_eos=False)
        ref, _ = autoregressive_decode(target, [3], pol)
        out, trace = speculative_decode(target, draft, [3], SpecDecodeConfig(4), pol)
        assert out == ref
        check_conservation(trace, out)

    @pytest.mark.parametrize("rule", ["standard_ratio", "paper_exact_match"])
    def test_sampling_trace_conservation_and_seed(self, rule):
        target, draft = tiny_transformer(seed=6), tiny_transformer(seed=7)
        pol = DecodePolicy("top_p", p=0.9, max_tokens=33, seed=2, stop_at_eos=False)
        cfg = SpecDecodeConfig(3, rule)
        a, ta = speculative_decode(target, draft, [1, 4], cfg, pol)
        b, tb = speculative_decode(target, draft, [1, 4], cfg, pol)
        assert a == b and ta.records()[:-1] == tb.records()[:-1]
        assert len(a) == 33
        check_conservation(ta, a)

    def test_budget_truncation_and_eos(self):
        rows = {(t,): np.eye(5)[(t + 1) % 5] for t in range(5)}
        model = TableLM(1, 5, rows)
        out, trace = speculative_decode(model, model, [0], SpecDecodeConfig(3), DecodePolicy(max_tokens=10))
        assert out == [1, EOS]
        check_conservation(trace, out)

    def test_bonus_off_reaches_budget(self):
        model = tiny_transformer(seed=5)
        pol = DecodePolicy("greedy", max_tokens=9, stop_at_eos=False)
        ref, _ = autoregressive_decode(model, [1, 2], pol)
        out, trace = speculative_decode(model, model, [1, 2], SpecDecodeConfig(3, bonus=False), pol)
        assert out == ref
        assert all(b.token is None for b in trace.blocks if b.proposed)
        check_conservation(trace, out)

    def test_trace_jsonl(self, tmp_path):
        model = tiny_transformer(seed=5)
        _, trace = speculative_decode(model, model, [1, 2], SpecDecodeConfig(2), DecodePolicy(max_tokens=7))
        path = tmp_path / "t.jsonl"
        trace.write_jsonl(path, include_timing=False)
        recs = [json.loads(line) for line in path.read_text().splitlines()]
        assert recs[-1]["type"] == "summary" and "duration_s" not in recs[-1]
        assert {r["type"] for r in recs[:-1]} == {"block"}
        assert recs[-1]["tokens_emitted"] == sum(r["accepted"] + (r["token"] is not None) for r in recs[:-1])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10_000), st.booleans())
    def test_greedy_lossless_on_tables(self, n, seed, bonus):
        rng = np.random.default_rng(seed)
        v = int(rng.integers(4, 12))
        target, draft = random_table_lm(rng, v, order=2), random_table_lm(rng, v, order=1)
        prompt = [int(x) for x in rng.integers(0, v, size=int(rng.integers(1, 5)))]
        pol = DecodePolicy("greedy", max_tokens=int(rng.integers(1, 30)))
        ref, _ = autoregressive_decode(target, prompt, pol)
        out, trace = speculative_decode(target, draft, prompt, SpecDecodeConfig(n, bonus=bonus), pol)
        assert out == ref
        check_conservation(trace, out)


class TestLookup:
    def test_abcab(self):
        assert prompt_lookup_draft([0, 1, 2, 0, 1], 1) == [2]

    def test_no_repeat(self):
        assert prompt_lookup_draft([0, 1, 2, 3], 2) is None

    def test_period_two(self):
        # the longest suffix recurs two tokens back, so the copy runs into its own proposals
        assert prompt_lookup_draft([7, 8, 7, 8, 7, 8], 3) == [7, 8, 7]

    def test_min_order(self):
        assert prompt_lookup_draft([0, 1, 2, 3, 0], 2) == [1, 2]
        assert prompt_lookup_draft([0, 1, 2, 3, 0], 2, min_order=2) is None

    def test_decode_greedy_lossless(self):
        target = tiny_transformer(seed=8)
        pol = DecodePolicy("greedy", max_tokens=30, stop_at_eos=False)
        prompt = [1, 5, 6, 7, 5, 6, 7, 5]
        ref, _ = autoregressive_decode(target, prompt, pol)
        out, trace = prompt_lookup_decode(target, prompt, SpecDecodeConfig(3), pol)
        assert out == ref
        assert trace.draft_calls == 0
        check_conservation(trace, out)

    def test_miss_with_bonus_off_still_advances(self):
        target = tiny_transformer(seed=8)
        pol = DecodePolicy("greedy", max_tokens=12, stop_at_eos=False)
        out, trace = prompt_lookup_decode(target, [1, 5], SpecDecodeConfig(3, bonus=False), pol, min_order=3)
        assert out == autoregressive_decode(target, [1, 5], pol)[0]
        check_conservation(trace, out)


class TestPolicy:
    def test_validation(self):
        with pytest.raises(InvalidArgument):
            DecodePolicy("beam")
        with pytest.raises(InvalidArgument):
            DecodePolicy(temperature=0)
        with pytest.raises(InvalidArgument):
            SpecDecodeConfig(0)
        with pytest.raises(InvalidArgument):
            SpecDecodeConfig(acceptance="other")

    def test_greedy_ties_to_lowest(self):
        assert int(np.argmax(GREEDY.distribution(np.array([1.0, 3.0, 3.0])))) == 1
