import numpy as np
import pytest

from emoface import autodiff as ad
from emoface.autodiff import Tensor
from emoface.audio2exp import (AlignmentConfig, ConfigurationError,
                               contrastive_loss, eval_rmse, forward_window,
                               fuse_window, fused_attention,
                               init_alignment_params, load_alignment,
                               predict_expression, project_features,
                               refined_prediction, save_alignment,
                               train_audio2exp)
from emoface.features import AUDIO_DIM, TEXT_DIM, emit_synthetic_clip, window
from emoface.hyperplane import EmotionHyperplane
from emoface.nn import grad_check

REDUCED = dict(d=8, d_h=8, n=2, ffn_hidden=(16, 8))


def reduced_params(seed=0, mode="full"):
    return init_alignment_params(AlignmentConfig(seed=seed, mode=mode, **REDUCED))


def unit_plane(dim=3, bias=0.0, tag="happy"):
    n = np.zeros(10)
    n[dim] = 1.0
    return EmotionHyperplane(n, bias, tag, 1.0)


@pytest.fixture(scope="module")
def clip():
    c, t = emit_synthetic_clip(1, 24, "happy", "spk")
    return c, t


class TestProjections:
    def test_zero_features_project_to_zero(self):
        params = reduced_params()
        frame = type("F", (), {"audio": np.zeros(AUDIO_DIM),
                               "emotion": np.zeros(AUDIO_DIM),
                               "text": np.zeros(TEXT_DIM)})()
        u, e, g = project_features(frame, params)
        assert np.array_equal(u.data, np.zeros(8))
        assert np.array_equal(e.data, np.zeros(8))
        assert np.array_equal(g.data, np.zeros(8))

    def test_selector_matrix_copies_coordinates(self, clip):
        c, _ = clip
        params = reduced_params()
        params.e1.data[...] = 0.0
        params.e1.data[:8, :8] = np.eye(8)
        u, _, _ = project_features(c.frames[3], params)
        assert np.abs(u.data - c.audio[3, :8].astype(np.float64)).max() < 1e-12

    def test_projection_matches_matmul_oracle(self, clip):
        c, _ = clip
        params = reduced_params(seed=2)
        u, e, g = project_features(c.frames[0], params)
        assert np.abs(u.data - c.audio[0].astype(np.float64) @ params.e1.data).max() < 1e-12
        assert np.abs(g.data - c.text[0].astype(np.float64) @ params.e3.data).max() < 1e-12


class TestFuseWindow:
    def test_all_pad_window_is_zero(self, clip):
        c, _ = clip
        params = reduced_params()
        w = window(c, 0, 2)
        w.audio[...] = 0.0
        w.emotion[...] = 0.0
        w.text[...] = 0.0
        s, g, v = fuse_window(w, params)
        assert np.array_equal(s.data, np.zeros((3, 8)))
        assert np.array_equal(g.data, np.zeros((3, 8)))
        assert np.array_equal(v.data, np.zeros((3, 8)))

    def test_single_row_window_matches_per_frame_projection(self, clip):
        c, _ = clip
        params = reduced_params(seed=1)
        w = window(c, 5, 0)
        s, g, v = fuse_window(w, params)
        u1, e1, g1 = project_features(c.frames[5], params)
        assert np.abs(s.data[0] - (u1.data + e1.data)).max() < 1e-12
        assert np.abs(g.data[0] - g1.data).max() < 1e-12
        assert np.abs(v.data[0] - u1.data).max() < 1e-12

    def test_swapping_frames_swaps_rows(self, clip):
        c, _ = clip
        params = reduced_params(seed=3)
        w = window(c, 10, 3)
        s1, _, _ = fuse_window(w, params)
        w.audio[[1, 2]] = w.audio[[2, 1]]
        w.emotion[[1, 2]] = w.emotion[[2, 1]]
        s2, _, _ = fuse_window(w, params)
        assert np.array_equal(s1.data[[2, 1]], s2.data[[1, 2]])
        assert np.array_equal(s1.data[0], s2.data[0])


class TestFusedAttention:
    def test_zero_inputs_give_uniform_attention_zero_outputs(self):
        params = reduced_params()
        zero = Tensor(np.zeros((3, 8)))
        h_v, h_e, h_g = fused_attention(zero, zero, zero, params)
        assert np.array_equal(h_v.data, np.zeros((3, 8)))
        assert np.array_equal(h_e.data, np.zeros((3, 8)))
        assert np.array_equal(h_g.data, np.zeros((3, 8)))

    def test_single_row_attention_is_identity_on_values(self):
        params = reduced_params(seed=4)
        rng = np.random.default_rng(0)
        s = Tensor(rng.normal(size=(1, 8)))
        g = Tensor(rng.normal(size=(1, 8)))
        v = Tensor(rng.normal(size=(1, 8)))
        h_v, h_e, h_g = fused_attention(s, g, v, params)
        assert np.abs(h_v.data - v.data @ params.wv1.data).max() < 1e-12
        assert np.abs(h_e.data - s.data @ params.wv2.data).max() < 1e-12
        assert np.abs(h_g.data - g.data @ params.wv3.data).max() < 1e-12

    def test_attention_rows_sum_to_one_via_shift_invariance(self):
        params = reduced_params(seed=5)
        rng = np.random.default_rng(1)
        s = Tensor(rng.normal(size=(4, 8)))
        g = Tensor(rng.normal(size=(4, 8)))
        v = Tensor(rng.normal(size=(4, 8)))
        h1 = fused_attention(s, g, v, params)[0].data
        # adding a constant vector to every value row shifts outputs by that
        # constant times Wv1 only if attention weights sum to one
        shift = np.ones((1, 8)) * 3.0
        v2 = Tensor(v.data + shift)
        h2 = fused_attention(s, g, v2, params)[0].data
        assert np.abs((h2 - h1) - shift @ params.wv1.data).max() < 1e-10

    def test_gradients_of_all_attention_weights(self):
        params = reduced_params(seed=6)
        rng = np.random.default_rng(2)
        s = Tensor(rng.normal(size=(3, 8)))
        g = Tensor(rng.normal(size=(3, 8)))
        v = Tensor(rng.normal(size=(3, 8)))
        readout = rng.normal(size=(3, 8))

        def loss(_):
            h_v, h_e, h_g = fused_attention(s, g, v, params)
            return ad.sum_all(ad.mul(ad.add(ad.add(h_v, h_e), h_g), readout))

        mats = [params.wq1, params.wk1, params.wv1, params.wq2, params.wk2,
                params.wv2, params.wv3]
        worst = max(grad_check(loss, m) for m in mats)
        assert worst < 1e-4


class TestPredictExpression:
    def test_zero_everything_gives_zero_heads(self):
        params = reduced_params()
        for net in (params.ffn1, params.ffn2):
            for t in net.params():
                t.data[...] = 0.0
        zero = Tensor(np.zeros((3, 8)))
        out = predict_expression(zero, zero, zero, params)
        assert np.array_equal(out.alpha_tilde.data, np.zeros(10))
        assert float(out.tau.data) == 0.0

    def test_head_outputs_have_contract_widths(self, clip):
        c, _ = clip
        params = reduced_params(seed=7)
        out = forward_window(window(c, 6, 2), params)
        assert out.alpha_tilde.data.shape == (10,)
        assert out.tau.data.shape == ()
        assert out.h_v.data.shape == (3, 8)

    def test_collapsed_ffn_is_linear_readout(self):
        cfg = AlignmentConfig(d=4, d_h=4, n=1, ffn_hidden=(), seed=0)
        params = init_alignment_params(cfg)
        rng = np.random.default_rng(3)
        h = [Tensor(rng.normal(size=(2, 4))) for _ in range(3)]
        out = predict_expression(*h, params)
        cat = np.concatenate([m.data[-1] for m in h])
        expect = cat @ params.ffn1.weights[0].data + params.ffn1.biases[0].data
        assert np.abs(out.alpha_tilde.data - expect).max() < 1e-12

    def test_end_to_end_jacobian_wrt_raw_audio(self, clip):
        c, _ = clip
        params = reduced_params(seed=8)
        w = window(c, 4, 2)
        audio64 = w.audio.astype(np.float64)
        probe = Tensor(audio64[2])          # current frame's raw audio feature
        readout = np.random.default_rng(4).normal(size=10)

        def f(t):
            u = ad.matmul(t, params.e1)
            e = ad.matmul(w.emotion[2].astype(np.float64), params.e2)
            rest_u = ad.matmul(audio64[:2], params.e1)
            rest_e = ad.matmul(w.emotion[:2].astype(np.float64), params.e2)
            g_all = ad.matmul(w.text.astype(np.float64), params.e3)
            s = ad.concat([ad.add(rest_u, rest_e),
                           ad.reshape(ad.add(u, e), (1, 8))], axis=0)
            v = ad.concat([rest_u, ad.reshape(u, (1, 8))], axis=0)
            h_v, h_e, h_g = fused_attention(s, g_all, v, params)
            out = predict_expression(h_v, h_e, h_g, params)
            return ad.dot(out.alpha_tilde, readout)

        assert grad_check(f, probe, coords=60) < 1e-4

    def test_all_pad_window_output_ignores_everything_but_the_ffns(self):
        from emoface.features import Window, AUDIO_DIM as A, EMOTION_DIM as E, \
            TEXT_DIM as T
        from emoface.nn import mlp_apply
        params_a = init_alignment_params(AlignmentConfig(seed=16, **REDUCED))
        params_b = init_alignment_params(AlignmentConfig(seed=17, **REDUCED))
        # same heads, different projections/attention: an all-zero window
        # reaches the heads as a zero vector either way
        params_b.ffn1 = params_a.ffn1
        params_b.ffn2 = params_a.ffn2
        pad = Window(np.zeros((3, A), np.float32), np.zeros((3, E), np.float32),
                     np.zeros((3, T), np.float32), np.zeros(3, np.int64), 3)
        out_a = forward_window(pad, params_a)
        out_b = forward_window(pad, params_b)
        assert np.array_equal(out_a.alpha_tilde.data, out_b.alpha_tilde.data)
        assert out_a.tau.data == out_b.tau.data
        direct = mlp_apply(params_a.ffn1, np.zeros(3 * 8))
        assert np.abs(out_a.alpha_tilde.data - direct.data).max() < 1e-12

    def test_forward_matches_composed_stages(self, clip):
        c, _ = clip
        params = reduced_params(seed=9)
        w = window(c, 8, 2)
        s, g, v = fuse_window(w, params)
        manual = predict_expression(*fused_attention(s, g, v, params), params)
        auto = forward_window(w, params)
        assert np.array_equal(manual.alpha_tilde.data, auto.alpha_tilde.data)
        assert manual.tau.data == auto.tau.data


class TestContrastiveLoss:
    def test_perfect_prediction_rho_zero(self):
        a = Tensor(np.arange(10.0))
        assert float(contrastive_loss(a, np.arange(10.0), np.ones(10), 0.0).data) == 0.0

    def test_analytic_value_with_partner(self):
        a_gt = np.zeros(10)
        partner = np.zeros(10)
        partner[0] = 2.0
        pred = Tensor(np.zeros(10))
        loss = contrastive_loss(pred, a_gt, partner, 0.5)
        assert float(loss.data) == pytest.approx(1.0)

    def test_default_rho_is_half(self):
        assert AlignmentConfig().rho == 0.5

    def test_default_iteration_budget(self):
        assert AlignmentConfig().iterations == 20000

    def test_default_dims(self):
        cfg = AlignmentConfig()
        assert cfg.d == 512 and cfg.d_h == 512 and cfg.n == 5
        assert cfg.ffn_hidden == (512, 256, 256, 128)

    def test_negative_rho_rejected(self):
        with pytest.raises(ValueError):
            contrastive_loss(Tensor(np.zeros(10)), np.zeros(10), np.zeros(10), -1.0)


class TestFullModuleGradients:
    def test_all_parameter_tensors_match_fd(self, clip):
        c, truth = clip
        params = reduced_params(seed=10)
        plane = unit_plane()
        w = window(c, 7, 2)

        def loss(_):
            _, alpha_hat = refined_prediction(w, params, plane)
            return contrastive_loss(alpha_hat, truth.alphas[7], truth.alphas[3], 0.5)

        worst = 0.0
        for name, p in params.named_params():
            err = grad_check(loss, p, coords=40)
            worst = max(worst, err)
        assert worst < 1e-4


def tiny_dataset(n_frames=30):
    data = []
    for speaker in ("s1", "s2"):
        for tag in ("happy", "sad"):
            clip, truth = emit_synthetic_clip(3, n_frames, tag, speaker)
            data.append((clip, truth))
    return data


def tiny_planes():
    return {tag: unit_plane(dim, 0.0, tag)
            for dim, tag in ((3, "happy"), (4, "sad"))}


class TestTraining:
    def test_training_is_deterministic(self):
        cfg = AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,), iterations=5,
                              batch_size=4, seed=11)
        data, planes = tiny_dataset(), tiny_planes()
        a = train_audio2exp(data, planes, cfg)
        b = train_audio2exp(data, planes, cfg)
        assert a.losses == b.losses
        for (na, ta), (nb, tb) in zip(a.params.named_params(),
                                      b.params.named_params()):
            assert na == nb and np.array_equal(ta.data, tb.data)

    def test_missing_plane_raises_with_tag(self):
        data = tiny_dataset()
        with pytest.raises(ConfigurationError, match="happy"):
            train_audio2exp(data, {"sad": unit_plane(4, 0.0, "sad")},
                            AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,),
                                            iterations=1, batch_size=2))

    def test_single_speaker_tag_needs_opt_in(self):
        clip, truth = emit_synthetic_clip(0, 10, "happy", "only")
        cfg = AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,), iterations=1,
                              batch_size=2)
        with pytest.raises(ConfigurationError, match="single"):
            train_audio2exp([(clip, truth)], tiny_planes(), cfg)
        cfg2 = AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,), iterations=1,
                               batch_size=2, single_speaker_ok=True)
        train_audio2exp([(clip, truth)], tiny_planes(), cfg2)

    def test_rho_zero_matches_plain_regression_recomputation(self):
        data, planes = tiny_dataset(), tiny_planes()
        cfg = AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,), iterations=4,
                              batch_size=3, seed=12, rho=0.0)
        result = train_audio2exp(data, planes, cfg)
        # replay the exact batch stream; with rho=0 the loss must equal the
        # plain per-sample regression distance, averaged over each batch
        params = init_alignment_params(cfg)
        samples = [(ci, fi) for ci, (c, _) in enumerate(data)
                   for fi in range(len(c))]
        batch_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
        from emoface.nn import adam_init, adam_step
        opt = adam_init(params.params(), lr=cfg.lr)
        for it in range(cfg.iterations):
            idx = batch_rng.choice(len(samples), size=cfg.batch_size, replace=True)
            vals = []
            plist = params.params()
            ad.zero_grads(plist)
            with ad.Tape() as tape:
                total = None
                for k in idx:
                    ci, fi = samples[k]
                    c, truth = data[ci]
                    w = window(c, fi, cfg.n)
                    _, ahat = refined_prediction(w, params, planes[c.emotion_tag])
                    term = ad.l2norm(ad.sub(truth.alphas[fi], ahat))
                    vals.append(float(term.data))
                    total = term if total is None else ad.add(total, term)
                total = ad.scale(total, 1.0 / cfg.batch_size)
                tape.backward(total)
            adam_step(opt, plist, [p.grad for p in plist])
            assert result.losses[it] == pytest.approx(np.mean(vals), abs=1e-12)

    def test_checkpoint_roundtrip_preserves_predictions(self, tmp_path, clip):
        c, _ = clip
        params = reduced_params(seed=13)
        path = tmp_path / "a2e.ckpt"
        save_alignment(params, path)
        loaded = load_alignment(path)
        w = window(c, 3, 2)
        a = forward_window(w, params)
        b = forward_window(w, loaded)
        assert np.array_equal(a.alpha_tilde.data, b.alpha_tilde.data)
        assert a.tau.data == b.tau.data

    def test_eval_rmse_zero_for_perfect_oracle(self):
        data = tiny_dataset(10)
        planes = tiny_planes()
        cfg = AlignmentConfig(d=8, d_h=8, n=2, ffn_hidden=(8,), seed=1)
        params = init_alignment_params(cfg)
        rmse = eval_rmse(data, params, planes)
        assert rmse > 0.0 and np.isfinite(rmse)


class TestNoAlignmentMode:
    def test_self_attention_variant_runs_and_differs(self, clip):
        c, _ = clip
        full = reduced_params(seed=14)
        abl = reduced_params(seed=14, mode="no_alignment")
        w = window(c, 6, 2)
        a = forward_window(w, full)
        b = forward_window(w, abl)
        assert a.alpha_tilde.data.shape == b.alpha_tilde.data.shape
        assert not np.array_equal(a.alpha_tilde.data, b.alpha_tilde.data)

    def test_self_attention_gradients(self, clip):
        c, truth = clip
        params = reduced_params(seed=15, mode="no_alignment")
        w = window(c, 5, 2)

        def loss(_):
            out = forward_window(w, params)
            return ad.l2norm(ad.sub(truth.alphas[5], out.alpha_tilde))

        worst = max(grad_check(loss, p, coords=30)
                    for _, p in params.named_params())
        assert worst < 1e-4
