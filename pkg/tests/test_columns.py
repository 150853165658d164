"""Column architecture, manifold embedding and path-loss checks."""
import numpy as np
import pytest

from pixelens import autodiff as ad
from pixelens import columns as cols
from pixelens import shots
from pixelens.autodiff import Tensor
from pixelens.gradcheck import grad_check

MICRO = cols.DenoiserConfig(input_channels=7, depth=3, base_width=8,
                            width_scale=1.0, recon_kernel=3, conv_kernel=3)


def micro_params(seed=0, dtype=np.float64):
    return cols.init_denoiser(MICRO, seed, dtype)


class TestDenoiserConfig:
    def test_default_architecture(self):
        cfg = cols.DenoiserConfig(input_channels=27)
        shapes = cfg.layer_shapes()
        assert len(shapes) == 9                 # 8 hidden + kernel logits
        assert shapes[0] == (5, 5, 27, 100)
        assert all(s == (5, 5, 100, 100) for s in shapes[1:-1])
        assert shapes[-1] == (5, 5, 100, 441)   # 21*21 taps

    def test_param_count_formula(self):
        cfg = cols.DenoiserConfig(input_channels=27)
        expect = sum(k1 * k2 * ci * co + co for (k1, k2, ci, co) in cfg.layer_shapes())
        assert cfg.param_count() == expect
        # hand count: layer0 5*5*27*100+100, 7 middles, final 5*5*100*441+441
        hand = (5 * 5 * 27 * 100 + 100) + 7 * (5 * 5 * 100 * 100 + 100) \
            + (5 * 5 * 100 * 441 + 441)
        assert cfg.param_count() == hand

    def test_width_scale_shrinks(self):
        full = cols.DenoiserConfig(input_channels=27)
        quarter = cols.DenoiserConfig(input_channels=27, width_scale=0.25)
        assert quarter.width == 25
        assert quarter.param_count() < full.param_count()

    def test_width_floor(self):
        tiny = cols.DenoiserConfig(input_channels=27, width_scale=0.01)
        assert tiny.width == 4

    def test_rejects_even_recon_kernel(self):
        with pytest.raises(ValueError, match="odd"):
            cols.DenoiserConfig(input_channels=27, recon_kernel=20)

    def test_init_matches_config(self):
        params = cols.init_denoiser(cols.DenoiserConfig(input_channels=15,
                                                        width_scale=0.1), seed=1)
        assert len(params.weights) == 9
        assert params.weights[0].shape == (5, 5, 15, 10)
        assert all((b.data == 0).all() for b in params.biases)
        total = sum(p.size for p in params.parameters())
        assert total == params.config.param_count()


class TestPredictKernels:
    def test_kernels_are_convex_weights(self):
        rng = np.random.default_rng(0)
        params = micro_params()
        kmap = cols.predict_kernels(
            Tensor(rng.normal(size=(5, 6, 3))),
            Tensor(rng.normal(size=(5, 6, 4))), params)
        assert kmap.values.shape == (5, 6, 9)
        kmap.validate()

    def test_center_bias_forces_identity(self):
        rng = np.random.default_rng(1)
        params = micro_params()
        center = (MICRO.recon_kernel ** 2 - 1) // 2
        params.biases[-1].data[center] = 20.0
        noisy = rng.normal(size=(5, 6, 3))
        kmap = cols.predict_kernels(Tensor(noisy), Tensor(rng.normal(size=(5, 6, 4))),
                                    params)
        assert kmap.values.data[..., center].min() > 0.999
        out = cols.apply_kernels(Tensor(noisy), kmap)
        np.testing.assert_allclose(out.data, noisy, atol=1e-2)

    def test_channel_mismatch_rejected(self):
        params = micro_params()
        with pytest.raises(ValueError, match="input channels"):
            cols.predict_kernels(Tensor(np.zeros((4, 4, 3))),
                                 Tensor(np.zeros((4, 4, 9))), params)

    def test_output_within_input_hull(self):
        # convex kernels cannot escape the input range
        rng = np.random.default_rng(2)
        params = micro_params(seed=3)
        noisy = rng.uniform(-2, 5, (6, 7, 3))
        kmap = cols.predict_kernels(Tensor(noisy), Tensor(rng.normal(size=(6, 7, 4))),
                                    params)
        out = cols.apply_kernels(Tensor(noisy), kmap).data
        assert out.min() >= noisy.min() - 1e-9
        assert out.max() <= noisy.max() + 1e-9

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(3)
        params = micro_params(seed=4)
        noisy = rng.normal(size=(2, 5, 5, 3))
        aux = rng.normal(size=(2, 5, 5, 4))
        batch = cols.apply_kernels(
            Tensor(noisy), cols.predict_kernels(Tensor(noisy), Tensor(aux), params)).data
        for i in range(2):
            one = cols.apply_kernels(
                Tensor(noisy[i]),
                cols.predict_kernels(Tensor(noisy[i]), Tensor(aux[i]), params)).data
            np.testing.assert_allclose(batch[i], one, atol=1e-12)


class TestManifold:
    def test_config_pins_36_inputs(self):
        with pytest.raises(ValueError, match="36"):
            cols.ManifoldConfig(dims=(35, 64, 32, 12))

    def test_embedding_is_12_channels(self):
        rng = np.random.default_rng(4)
        params = cols.init_manifold(cols.ManifoldConfig(), seed=0, dtype=np.float64)
        desc = rng.normal(size=(3, 4, 5, 36))
        out = cols.embed_pbuffer(Tensor(desc), params)
        assert out.shape == (3, 4, 12)
        per = cols.embed_samples(Tensor(desc), params)
        assert per.shape == (3, 4, 5, 12)

    def test_identical_samples_identical_embeddings(self):
        rng = np.random.default_rng(5)
        params = cols.init_manifold(cols.ManifoldConfig(), seed=1, dtype=np.float64)
        one = rng.normal(size=(2, 2, 1, 36))
        desc = np.repeat(one, 4, axis=2)
        per = cols.embed_samples(Tensor(desc), params).data
        for s in range(1, 4):
            np.testing.assert_array_equal(per[:, :, s], per[:, :, 0])

    def test_two_sample_swap_is_exactly_invariant(self):
        rng = np.random.default_rng(6)
        params = cols.init_manifold(cols.ManifoldConfig(), seed=2, dtype=np.float64)
        desc = rng.normal(size=(2, 3, 2, 36))
        a = cols.embed_pbuffer(Tensor(desc), params).data
        b = cols.embed_pbuffer(Tensor(desc[:, :, ::-1].copy()), params).data
        np.testing.assert_array_equal(a, b)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        params = cols.init_manifold(cols.ManifoldConfig(), seed=3, dtype=np.float64)
        desc = rng.normal(size=(2, 3, 6, 36))
        perm = rng.permutation(6)
        a = cols.embed_pbuffer(Tensor(desc), params).data
        b = cols.embed_pbuffer(Tensor(desc[:, :, perm].copy()), params).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_samples_rejected(self):
        params = cols.init_manifold(cols.ManifoldConfig(), seed=0)
        with pytest.raises(ValueError, match="sample"):
            cols.embed_samples(Tensor(np.zeros((2, 2, 0, 36))), params)

    def test_param_count(self):
        cfg = cols.ManifoldConfig()
        assert cfg.param_count() == (36 * 64 + 64) + (64 * 32 + 32) + (32 * 12 + 12)


class TestGradients:
    def test_column_forward_gradcheck(self):
        rng = np.random.default_rng(8)
        params = micro_params(seed=5)
        noisy = rng.normal(size=(4, 4, 3))
        aux = rng.normal(size=(4, 4, 4))
        ref = rng.normal(size=(4, 4, 3))
        flat_params = params.parameters()

        def f(*tensors):
            p = cols.DenoiserParams(MICRO)
            p.weights = list(tensors[0::2])
            p.biases = list(tensors[1::2])
            kmap = cols.predict_kernels(Tensor(noisy), Tensor(aux), p)
            out = cols.apply_kernels(Tensor(noisy), kmap)
            return ad.mean(ad.absolute(ad.sub(out, Tensor(ref))))

        report = grad_check(f, [p.data for p in flat_params],
                            tolerance=1e-4, max_checks_per_input=12, seed=0)
        assert report.passed, report.max_rel_error

    def test_manifold_gradcheck(self):
        rng = np.random.default_rng(9)
        cfg = cols.ManifoldConfig(dims=(36, 8, 12))
        params = cols.init_manifold(cfg, seed=6, dtype=np.float64)
        desc = rng.normal(size=(2, 2, 3, 36))

        def f(w1, b1, w2, b2):
            p = cols.ManifoldParams(cfg, weights=[w1, w2], biases=[b1, b2])
            out = cols.embed_pbuffer(Tensor(desc), p)
            return ad.mean(ad.mul(out, out))

        report = grad_check(f, [t.data for t in params.parameters()],
                            tolerance=1e-5, max_checks_per_input=40, seed=1)
        assert report.passed, report.max_rel_error


class TestDenoiseColumn:
    @pytest.fixture
    def tiny_state(self):
        from pixelens import model
        cfg = model.ModelConfig(width_scale=0.05, depth=3, recon_kernel=5,
                                conv_kernel=3, ens_layers=2, ens_base_width=8,
                                manifold_dims=(36, 16, 12))
        return model.build_model(cfg, seed=0)

    def test_shapes_and_finiteness(self, tiny_state):
        from conftest import make_shot
        shot = make_shot(h=8, w=8, spp=3, seed=1)
        for column in ("G", "P"):
            for branch in ("diffuse", "specular"):
                out = cols.denoise_column(shot, column, branch, tiny_state)
                assert out.shape == (8, 8, 3)
                assert np.isfinite(out).all()

    def test_postprocessed_sweep_nonnegative(self, tiny_state):
        from conftest import make_shot
        for seed in range(100):
            shot = make_shot(h=6, w=6, spp=2, seed=seed)
            d = cols.denoise_column(shot, "G", "diffuse", tiny_state)
            s = cols.denoise_column(shot, "P", "specular", tiny_state)
            out = shots.postprocess_combine(d, s, shot.albedo_diffuse)
            assert np.isfinite(out).all()
            assert (out >= 0).all()

    def test_rejects_unknown_column(self, tiny_state):
        from conftest import make_shot
        with pytest.raises(ValueError, match="column"):
            cols.denoise_column(make_shot(), "Q", "diffuse", tiny_state)


class TestPathLoss:
    def embeddings(self, values):
        return Tensor(np.asarray(values, np.float64), requires_grad=True)

    def test_single_positive_pair_is_squared_distance(self):
        # two pixels, one sample each: references match -> pulled pair
        emb = np.zeros((1, 2, 1, 12))
        emb[0, 1, 0, 0] = 0.7
        ref = np.full((1, 2, 3), 0.5)
        res = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(0), num_pairs=1)
        assert not res.warning and res.positive_pairs == 1
        assert res.loss.data == pytest.approx(0.7 ** 2, rel=1e-6)

    def test_single_negative_pair_is_squared_hinge(self):
        emb = np.zeros((1, 2, 1, 12))
        emb[0, 1, 0, 0] = 0.4
        ref = np.zeros((1, 2, 3))
        ref[0, 1] = 3.0  # tone-mapped difference far above tau_neg
        res = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(0), num_pairs=1)
        assert res.negative_pairs == 1
        d = np.sqrt(0.4 ** 2 + 1e-12)
        assert res.loss.data == pytest.approx((1.0 - d) ** 2, rel=1e-6)

    def test_distant_pair_beyond_margin_costs_nothing(self):
        emb = np.zeros((1, 2, 1, 12))
        emb[0, 1, 0, 0] = 5.0  # farther than the margin
        ref = np.zeros((1, 2, 3))
        ref[0, 1] = 3.0
        res = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(0), num_pairs=1)
        assert res.loss.data == pytest.approx(0.0, abs=1e-12)

    def test_dead_zone_gives_warning_zero(self):
        emb = np.random.default_rng(1).normal(size=(1, 2, 1, 12))
        ref = np.zeros((1, 2, 3))
        ref[0, 1] = 0.02  # tone-mapped gap lands between tau_pos and tau_neg
        res = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(0),
            tau_pos=0.01, tau_neg=0.5, num_pairs=4)
        assert res.warning and res.loss.data == 0.0 and res.active_pairs == 0

    def test_rejects_bad_thresholds(self):
        with pytest.raises(ValueError, match="tau"):
            cols.path_disentangle_loss(
                self.embeddings(np.zeros((1, 2, 1, 12))), np.zeros((1, 2, 3)),
                np.random.default_rng(0), tau_pos=0.3, tau_neg=0.2)

    def test_too_few_elements_warns(self):
        res = cols.path_disentangle_loss(
            self.embeddings(np.zeros((1, 1, 1, 12))), np.zeros((1, 1, 3)),
            np.random.default_rng(0))
        assert res.warning and res.loss.data == 0.0

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(10)
        emb = rng.normal(size=(4, 4, 3, 12))
        ref = rng.uniform(0, 2, (4, 4, 3))
        a = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(7), num_pairs=32)
        b = cols.path_disentangle_loss(
            self.embeddings(emb), ref, np.random.default_rng(7), num_pairs=32)
        assert a.loss.data == b.loss.data

    def test_gradient_flows_to_embeddings(self):
        rng = np.random.default_rng(11)
        emb = self.embeddings(rng.normal(size=(3, 3, 2, 12)))
        ref = rng.uniform(0, 2, (3, 3, 3))
        res = cols.path_disentangle_loss(emb, ref, np.random.default_rng(3),
                                         num_pairs=16)
        assert res.active_pairs > 0
        res.loss.backward()
        assert emb.grad is not None and np.abs(emb.grad).sum() > 0

    def test_gradcheck(self):
        rng = np.random.default_rng(12)
        emb = rng.normal(size=(2, 3, 2, 6))
        ref = rng.uniform(0, 2, (2, 3, 3))

        def f(t):
            return cols.path_disentangle_loss(
                t, ref, np.random.default_rng(5), num_pairs=24).loss

        report = grad_check(f, emb, tolerance=1e-5)
        assert report.passed, report.max_rel_error
