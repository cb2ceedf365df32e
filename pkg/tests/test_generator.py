import math

import pytest
import torch

from convofeat.extractor import ExtractorConfig, new_extractor
from convofeat.generator import (
    GeneratorConfig,
    GeneratorTrainConfig,
    StSchedule,
    dialogue_windows,
    fit_agg_weights,
    loss_cycle,
    new_generator,
    persona_position_mask,
    st_select,
    target_features,
    train_generator,
    variant_mode,
    window_context_features,
)


def small_gen_config(variant="t", feature_dim=8, k=2):
    return GeneratorConfig(variant=variant, k=k, embed_dim=16, n_filters=16,
                           enc_dim=24, hidden=24, feature_dim=feature_dim)


def small_extractor(vocab, kind="topic", mode="soft", seed=0):
    cfg = ExtractorConfig(kind=kind, mode=mode, n_features=8, embed_dim=16,
                          n_filters=16, enc_dim=24)
    return new_extractor(vocab, cfg, seed=seed)


class TestStSelect:
    def test_forward_is_greedy_onehot(self):
        p = torch.tensor([[0.1, 0.7, 0.2]])
        y = st_select(p, tau=1.0)
        assert torch.equal(y, torch.tensor([[0.0, 1.0, 0.0]]))

    def test_forward_independent_of_tau(self):
        p = torch.tensor([[0.3, 0.5, 0.2]])
        for tau in (1.0, 0.1, 0.01):
            assert torch.equal(st_select(p, tau), st_select(p, 1.0))

    def test_backward_scales_inverse_tau(self):
        grads = {}
        for tau in (1.0, 0.01):
            p = torch.tensor([[0.3, 0.5, 0.2]], requires_grad=True)
            st_select(p, tau).sum().backward()
            grads[tau] = p.grad.clone()
        assert torch.allclose(grads[0.01], grads[1.0] * 100.0)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            st_select(torch.ones(1, 2), tau=0.0)


class TestStSchedule:
    def test_linear_slope_annealing(self):
        sched = StSchedule(initial_slope=1.0, final_slope=100.0)
        assert sched.tau(0, 11) == pytest.approx(1.0)
        assert sched.tau(10, 11) == pytest.approx(0.01)
        mid_slope = 1.0 + (100.0 - 1.0) * (5 / 10)
        assert sched.tau(5, 11) == pytest.approx(1.0 / mid_slope)

    def test_single_epoch_uses_final(self):
        sched = StSchedule(initial_slope=1.0, final_slope=100.0)
        assert sched.tau(0, 1) == pytest.approx(0.01)


class TestVariants:
    def test_modes(self):
        assert variant_mode("t") == "soft"
        assert variant_mode("tp") == "soft"
        assert variant_mode("tp-bin") == "hard"

    def test_s2s_rejects_feature_dim(self):
        with pytest.raises(ValueError):
            GeneratorConfig(variant="s2s", feature_dim=8)

    def test_feature_variant_requires_dim(self):
        with pytest.raises(ValueError):
            GeneratorConfig(variant="t", feature_dim=0)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(variant="xyz")


class TestGeneratorModel:
    def test_uniform_logits_mle_is_log_vocab(self, tiny_vocab):
        model = new_generator(tiny_vocab, small_gen_config(), seed=0)
        with torch.no_grad():
            model.out_proj.weight.zero_()
            model.out_proj.bias.zero_()
        v = len(tiny_vocab.id_to_token)
        targets = torch.tensor([[2, 5, 6, 3, 0, 0]])
        h0 = torch.zeros(1, 24)
        loss = model.decode_teacher_forced(h0, targets)
        assert loss.item() == pytest.approx(math.log(v), rel=1e-5)

    def test_rollout_tokens_match_for_all_taus(self, tiny_vocab):
        model = new_generator(tiny_vocab, small_gen_config(), seed=1)
        h0 = torch.randn(2, 24)
        outs = [model.rollout_st(h0, max_len=8, tau=tau).tokens
                for tau in (1.0, 0.25, 0.01)]
        assert outs[0] == outs[1] == outs[2]

    def test_rollout_stops_at_eos(self, tiny_vocab):
        model = new_generator(tiny_vocab, small_gen_config(), seed=1)
        h0 = torch.randn(1, 24)
        roll = model.rollout_st(h0, max_len=12, tau=1.0)
        from convofeat.corpus import EOS
        assert EOS not in roll.tokens[0]

    def test_s2s_rejects_features(self, tiny_vocab):
        model = new_generator(tiny_vocab, small_gen_config("s2s", 0), seed=0)
        ids = torch.randint(0, 30, (1, 2, 16))
        ctx = model.encode_context(ids)
        with pytest.raises(ValueError):
            model.init_hidden(ctx, torch.ones(1, 8))

    def test_feature_variant_changes_h0(self, tiny_vocab):
        model = new_generator(tiny_vocab, small_gen_config(), seed=0)
        ids = torch.randint(0, 30, (1, 2, 16))
        ctx = model.encode_context(ids)
        h_a = model.init_hidden(ctx, torch.zeros(1, 8))
        h_b = model.init_hidden(ctx, torch.ones(1, 8))
        assert not torch.allclose(h_a, h_b)

    def test_mle_gradient_matches_finite_difference(self, tiny_vocab):
        # 64-bit check on the H0 projection weights of a tiny model
        model = new_generator(tiny_vocab, small_gen_config(), seed=2).double()
        ids = torch.randint(0, 30, (2, 2, 16))
        feats = torch.rand(2, 8, dtype=torch.float64)
        targets = torch.tensor([[2, 7, 3, 0], [2, 9, 3, 0]])

        def forward():
            ctx = model.encode_context(ids)
            h0 = model.init_hidden(ctx, feats)
            return model.decode_teacher_forced(h0, targets)

        loss = forward()
        param = model.h0_mlp[0].bias
        (grad,) = torch.autograd.grad(loss, param)
        eps = 1e-6
        for i in (0, 3):
            with torch.no_grad():
                param[i] += eps
            hi = forward().item()
            with torch.no_grad():
                param[i] -= 2 * eps
            lo = forward().item()
            with torch.no_grad():
                param[i] += eps
            num = (hi - lo) / (2 * eps)
            assert grad[i].item() == pytest.approx(num, rel=1e-3, abs=1e-10)


class TestLossCycle:
    def test_hand_case_squared_distance(self, tiny_vocab):
        ex = small_extractor(tiny_vocab)
        model = new_generator(tiny_vocab, small_gen_config(), seed=0)
        h0 = torch.randn(1, 24)
        roll = model.rollout_st(h0, max_len=6, tau=1.0)
        f_in = torch.zeros(1, 8)
        got = loss_cycle(f_in, roll, [ex]).item()
        f_out = ex.cycle_features(roll.padded_onehot(ex.encoder.max_len))
        want = float((f_out ** 2).sum(dim=1).mean())
        assert got == pytest.approx(want, rel=1e-5)

    def test_zero_when_features_reproduced(self, tiny_vocab):
        ex = small_extractor(tiny_vocab)
        model = new_generator(tiny_vocab, small_gen_config(), seed=0)
        roll = model.rollout_st(torch.randn(1, 24), max_len=6, tau=1.0)
        f_out = ex.cycle_features(roll.padded_onehot(ex.encoder.max_len))
        assert loss_cycle(f_out, roll, [ex]).item() == pytest.approx(0.0, abs=1e-10)


class TestAggWeights:
    def test_weights_sum_to_one(self):
        feats = torch.rand(40, 4, 8)
        target = torch.rand(40, 8)
        agg = fit_agg_weights(feats, target, kind="topic", iters=50)
        assert sum(agg.weights) == pytest.approx(1.0, abs=1e-6)

    def test_persona_mask_zeros_same_parity_positions(self):
        # 1-based positions sharing parity with K get zero weight
        assert persona_position_mask(4) == [False, True, False, True]
        assert persona_position_mask(5) == [True, False, True, False, True]
        feats = torch.rand(40, 4, 8)
        target = torch.rand(40, 8)
        agg = fit_agg_weights(feats, target, kind="persona", iters=50)
        w = agg.weights
        assert w[1] == 0.0 and w[3] == 0.0
        assert sum(w) == pytest.approx(1.0, abs=1e-6)

    def test_last_position_dominates_when_target_equals_it(self):
        torch.manual_seed(0)
        feats = torch.rand(60, 4, 8)
        target = feats[:, -1, :].clone()
        agg = fit_agg_weights(feats, target, kind="topic", iters=300)
        assert agg.weights[-1] > 1.0 / 4

    def test_serialisation_round_trip(self):
        feats = torch.rand(20, 3, 8)
        agg = fit_agg_weights(feats, feats[:, 0], kind="persona", iters=20)
        again = type(agg).from_dict(agg.to_dict())
        assert again.weights == pytest.approx(agg.weights)
        assert again.kind == "persona"

    def test_single_position_rejected(self):
        with pytest.raises(ValueError):
            fit_agg_weights(torch.rand(10, 1, 8), torch.rand(10, 8), kind="topic")


class TestWindows:
    def test_window_layout(self, tiny_split, tiny_vocab):
        k = 2
        wins = dialogue_windows(tiny_split.train[:2], k, tiny_vocab)
        d = tiny_split.train[0]
        per_dialogue = len(d.turns) - k
        assert len(wins) == 2 * per_dialogue
        w = wins[0]
        assert len(w.context) == k
        assert all(len(row) == tiny_vocab.max_len for row in w.context)
        # decoder form wraps the body with BOS/EOS
        assert len(w.target_dec) == tiny_vocab.max_len + 2

    def test_window_context_features_shape(self, tiny_split, tiny_vocab):
        ex = small_extractor(tiny_vocab)
        wins = dialogue_windows(tiny_split.train[:2], 2, tiny_vocab)
        ctx, tgt = window_context_features(ex, wins)
        assert ctx.shape == (len(wins), 2, 8)
        assert tgt.shape == (len(wins), 8)

    def test_target_features_concatenates_kinds(self, tiny_vocab, tiny_split):
        topic = small_extractor(tiny_vocab, "topic")
        persona = small_extractor(tiny_vocab, "persona")
        wins = dialogue_windows(tiny_split.train[:1], 2, tiny_vocab)
        enc = torch.tensor([w.target_enc for w in wins])
        f = target_features([topic, persona], enc)
        assert f.shape == (len(wins), 16)
        assert target_features([], enc) is None


class TestTrainGenerator:
    def run_small(self, tiny_split, tiny_vocab, variant, extractors, eta):
        model = new_generator(
            tiny_vocab,
            small_gen_config(variant, 8 * len(extractors) if extractors else 0),
            seed=0)
        cfg = GeneratorTrainConfig(eta=eta, lr=1e-3, batch_size=16, max_epochs=2,
                                   patience=2, seed=0, rollout_len=6)
        return model, train_generator(model, tiny_split, extractors, cfg, tiny_vocab)

    def test_s2s_trains_and_reports(self, tiny_split, tiny_vocab):
        _, hist = self.run_small(tiny_split, tiny_vocab, "s2s", [], 0.0)
        assert len(hist) == 2
        assert {"train_mle", "valid_mle", "valid_total", "tau"} <= set(hist[0])

    def test_extractors_frozen_during_training(self, tiny_split, tiny_vocab):
        ex = small_extractor(tiny_vocab)
        before = {k: v.clone() for k, v in ex.state_dict().items()}
        self.run_small(tiny_split, tiny_vocab, "t", [ex], eta=0.1)
        after = ex.state_dict()
        for k in before:
            assert torch.equal(before[k], after[k]), k

    def test_variant_extractor_mismatch_rejected(self, tiny_split, tiny_vocab):
        hard = small_extractor(tiny_vocab, "topic", "hard")
        with pytest.raises(ValueError):
            self.run_small(tiny_split, tiny_vocab, "t", [hard], eta=0.1)

    def test_tp_requires_both_kinds(self, tiny_split, tiny_vocab):
        topic = small_extractor(tiny_vocab, "topic")
        with pytest.raises(ValueError):
            self.run_small(tiny_split, tiny_vocab, "tp", [topic], eta=0.1)
