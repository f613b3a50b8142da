import numpy as np
import pytest

from tacshape import autodiff as ad
from tacshape.decoder import (DecoderConfig, InferenceConfig, PosEnc, SdfTrainConfig, batch_loss,
                              dataset_loss, decode, decoder_forward, finetune_pivotal,
                              infer_latent, init_decoder, load_decoder, observation_loss,
                              reconstruct_sdf, save_decoder, train_decoder)
from tacshape.errors import EmptyDatasetError, EmptyObservationError
from tacshape.rng import rng_from


class TestPosEnc:
    def test_zero_input(self):
        enc = PosEnc(L=4, include_input=True)
        out = enc.encode(np.zeros((1, 3)))[0]
        assert np.allclose(out[:3], 0.0)          # raw input
        sins = out[3::6], out[4::6], out[5::6]
        # layout: per k, [sin(x,y,z), cos(x,y,z)]
        for k in range(4):
            block = out[3 + 6 * k: 3 + 6 * (k + 1)]
            assert np.allclose(block[:3], 0.0)    # sin terms
            assert np.allclose(block[3:], 1.0)    # cos terms

    def test_output_length(self):
        assert PosEnc(L=6, include_input=True).dim == 39
        assert PosEnc(L=6, include_input=False).dim == 36
        out = PosEnc(L=6, include_input=True).encode(np.zeros((2, 3)))
        assert out.shape == (2, 39)

    def test_base_frequency_periodicity(self):
        enc = PosEnc(L=1, include_input=False)
        x = np.array([[0.3, -0.7, 0.2]])
        assert np.allclose(enc.encode(x), enc.encode(x + 2.0), atol=1e-12)

    def test_deterministic(self):
        enc = PosEnc()
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(enc.encode(x), enc.encode(x))


class TestDecode:
    def test_zero_final_weights_constant_bias(self):
        cfg = DecoderConfig(clamp_enabled=False)
        model = init_decoder(cfg, seed=0)
        model.params["out.w"].data[:] = 0.0
        model.params["out.b"].data[:] = 0.042
        z = np.zeros(cfg.latent_dim)
        pts = np.random.default_rng(1).uniform(-1, 1, (20, 3))
        out = decode(model, z, pts)
        assert np.allclose(out, 0.042, atol=1e-7)

    def test_batched_equals_pointwise(self):
        cfg = DecoderConfig()
        model = init_decoder(cfg, seed=1)
        z = np.random.default_rng(2).normal(size=cfg.latent_dim) * 0.01
        pts = np.random.default_rng(3).uniform(-1, 1, (15, 3))
        batched = decode(model, z, pts)
        single = np.array([decode(model, z, p) for p in pts])
        assert np.allclose(batched, single, atol=1e-7)

    def test_clamped_range(self):
        cfg = DecoderConfig(clamp_delta=0.1, clamp_enabled=True)
        model = init_decoder(cfg, seed=4)
        model.params["out.b"].data[:] = 5.0  # force saturation
        f = reconstruct_sdf(model, np.zeros(cfg.latent_dim))
        vals = f(np.random.default_rng(5).uniform(-1, 1, (50, 3)))
        assert np.all(np.abs(vals) <= 0.1 + 1e-7)

    def test_field_closure_deterministic(self):
        cfg = DecoderConfig()
        model = init_decoder(cfg, seed=6)
        f = reconstruct_sdf(model, np.zeros(cfg.latent_dim))
        pts = np.random.default_rng(7).uniform(-1, 1, (30, 3))
        assert np.array_equal(f(pts), f(pts))

    def test_grid_matches_pointwise(self):
        cfg = DecoderConfig()
        model = init_decoder(cfg, seed=8)
        z = np.zeros(cfg.latent_dim)
        f = reconstruct_sdf(model, z, chunk=7)  # force chunk boundaries
        pts = np.random.default_rng(9).uniform(-1, 1, (23, 3))
        assert np.allclose(f(pts), decode(model, z, pts), atol=1e-7)


def tiny_problem(n_shapes=2, n_pts=40, seed=0):
    rng = rng_from(seed)
    datasets = []
    for i in range(n_shapes):
        pts = rng.uniform(-1, 1, (n_pts, 3))
        r = 0.4 + 0.2 * i
        s = np.linalg.norm(pts, axis=1) - r
        datasets.append((pts, s))
    return datasets


class TestTraining:
    def test_loss_decomposition(self):
        cfg = DecoderConfig()
        model = init_decoder(cfg, seed=0)
        datasets = tiny_problem()
        pts = np.concatenate([p for p, _ in datasets])
        tgt = np.concatenate([s for _, s in datasets])
        sidx = np.concatenate([np.full(40, i, np.int64) for i in range(2)])
        lat = rng_from(1).normal(scale=0.5, size=(2, cfg.latent_dim))
        alpha = 3e-3
        total, data, reg = dataset_loss(model, lat, pts, tgt, sidx, alpha)
        assert abs(total - (data + reg)) < 1e-12
        assert abs(reg - alpha * (lat ** 2).sum()) < 1e-10
        total0, data0, reg0 = dataset_loss(model, lat, pts, tgt, sidx, 0.0)
        assert reg0 == 0.0 and total0 == data0 and abs(data0 - data) < 1e-12

    def test_pure_weight_decay_shrinks_latent(self):
        """Huge alpha with a zeroed data term: ||z|| strictly decreases."""
        cfg = DecoderConfig()
        model = init_decoder(cfg, seed=0)
        z = ad.Tensor(rng_from(2).normal(scale=0.5, size=(1, cfg.latent_dim)), requires_grad=True)
        opt = ad.Adam([([z], 1e-2)])
        norms = [float(np.linalg.norm(z.data))]
        for _ in range(10):
            loss = ad.scale(ad.sumsq(z), 1e3)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            norms.append(float(np.linalg.norm(z.data)))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDatasetError):
            train_decoder([], DecoderConfig(), SdfTrainConfig(epochs=1))
        with pytest.raises(EmptyDatasetError):
            train_decoder([(np.zeros((0, 3)), np.zeros(0))], DecoderConfig(), SdfTrainConfig(epochs=1))

    def test_identical_shapes_close_latents(self):
        ds = tiny_problem(1, 150, seed=3)[0]
        sets = [ds, (ds[0].copy(), ds[1].copy())]  # same shape twice
        other = tiny_problem(2, 150, seed=4)       # two different radii
        cfg = DecoderConfig(latent_dim=8, hidden=32, n_layers=2, skip_layer=0, penc_l=2)
        tcfg = SdfTrainConfig(epochs=150, batch_size=128, seed=0, lr_theta=1e-3, lr_z=2e-3)
        _, lat, _ = train_decoder(sets + other, cfg, tcfg)
        twin_gap = np.linalg.norm(lat[0] - lat[1])
        distinct = [np.linalg.norm(lat[a] - lat[b]) for a, b in ((0, 2), (0, 3), (2, 3), (1, 2), (1, 3))]
        assert twin_gap < np.median(distinct)

    def test_training_deterministic(self):
        cfg = DecoderConfig(latent_dim=4, hidden=16, n_layers=2, skip_layer=0, penc_l=2)
        runs = []
        for _ in range(2):
            _, lat, hist = train_decoder(tiny_problem(), cfg,
                                         SdfTrainConfig(epochs=3, batch_size=32, seed=11))
            runs.append((lat.copy(), tuple(hist)))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert runs[0][1] == runs[1][1]

    def test_full_loss_gradcheck(self):
        """Gradient of the training objective w.r.t. theta and z (f64)."""
        cfg = DecoderConfig(latent_dim=3, hidden=8, n_layers=2, skip_layer=1, penc_l=2)
        model = init_decoder(cfg, seed=0, dtype=np.float64)
        rng = rng_from(5)
        lat = ad.Tensor(rng.normal(scale=0.1, size=(2, 3)), requires_grad=True, dtype=np.float64)
        pts = rng.uniform(-1, 1, (12, 3))
        enc = cfg.penc.encode(pts)
        tgt = rng.normal(size=12) * 0.05
        sidx = np.array([0, 1] * 6, dtype=np.int64)

        def loss():
            return batch_loss(model, lat, enc, tgt, sidx, alpha=1e-3)

        err = ad.check_gradients(loss, model.param_list() + [lat], h=1e-5)
        assert err < 1e-4


@pytest.fixture(scope="module")
def small_trained():
    cfg = DecoderConfig(latent_dim=8, hidden=48, n_layers=3, skip_layer=1, penc_l=3)
    datasets = tiny_problem(2, 600, seed=10)
    tcfg = SdfTrainConfig(epochs=120, batch_size=256, seed=0, lr_theta=1e-3, lr_z=2e-3)
    model, lat, hist = train_decoder(datasets, cfg, tcfg)
    return model, lat, datasets


class TestInference:
    def test_empty_observation(self, small_trained):
        model, _, _ = small_trained
        with pytest.raises(EmptyObservationError):
            infer_latent(model, np.zeros((0, 3)), np.zeros(0), InferenceConfig())

    def test_self_recovery(self, small_trained):
        model, lat, datasets = small_trained
        pts, s = datasets[0]
        near = np.abs(s) < 0.15
        icfg = InferenceConfig(steps=400, lr_z=5e-3, eval_every=20)
        z, hist = infer_latent(model, pts[near], s[near], icfg, seed=1)
        # decode error on held-out samples of that shape within 2x training error
        hold_pts, hold_s = datasets[0]
        train_err = np.abs(decode(model, lat[0], hold_pts) - np.clip(hold_s, -0.1, 0.1)).mean()
        rec_err = np.abs(decode(model, z, hold_pts) - np.clip(hold_s, -0.1, 0.1)).mean()
        assert rec_err < 2 * train_err + 5e-3

    def test_permutation_invariance(self, small_trained):
        model, _, datasets = small_trained
        pts, s = datasets[0]
        icfg = InferenceConfig(steps=30, batch_size=64, eval_every=10)
        z1, _ = infer_latent(model, pts, s, icfg, seed=3)
        perm = np.random.default_rng(0).permutation(len(pts))
        z2, _ = infer_latent(model, pts[perm], s[perm], icfg, seed=3)
        assert np.array_equal(z1, z2)

    def test_regularization_shrinks_norm(self, small_trained):
        model, _, datasets = small_trained
        pts, s = datasets[1]
        base = InferenceConfig(steps=150, alpha=0.0)
        reg = InferenceConfig(steps=150, alpha=1e-2)
        z0, _ = infer_latent(model, pts, s, base, seed=5)
        z1, _ = infer_latent(model, pts, s, reg, seed=5)
        assert np.linalg.norm(z1) <= np.linalg.norm(z0) + 1e-9

    def test_best_iterate_returned(self, small_trained):
        model, _, datasets = small_trained
        pts, s = datasets[0]
        icfg = InferenceConfig(steps=100, eval_every=10)
        z, hist = infer_latent(model, pts, s, icfg, seed=7)
        final = observation_loss(model, z, model.cfg.penc.encode(pts).astype(np.float32),
                                 np.clip(s, -0.1, 0.1), icfg.alpha)
        assert final <= min(h[1] for h in hist) + 1e-9


class TestFinetune:
    def test_zero_steps_bitwise_identical(self, small_trained):
        model, lat, datasets = small_trained
        pts, s = datasets[0]
        icfg = InferenceConfig(finetune_steps=0)
        tuned, _ = finetune_pivotal(model, lat[0], pts, s, icfg)
        for k in model.params:
            assert np.array_equal(tuned.params[k].data, model.params[k].data)

    def test_observation_loss_never_increases(self, small_trained):
        model, lat, datasets = small_trained
        pts, s = datasets[1]
        icfg = InferenceConfig(finetune_steps=60, lr_theta=1e-4, eval_every=10)
        enc = model.cfg.penc.encode(pts).astype(np.float32)
        tgt = np.clip(s, -0.1, 0.1)
        before = observation_loss(model, lat[1], enc, tgt, icfg.alpha)
        tuned, hist = finetune_pivotal(model, lat[1], pts, s, icfg, seed=2)
        after = observation_loss(tuned, lat[1], enc, tgt, icfg.alpha)
        assert after <= before + 1e-12

    def test_input_model_untouched(self, small_trained):
        model, lat, datasets = small_trained
        pts, s = datasets[0]
        snapshot = {k: t.data.copy() for k, t in model.params.items()}
        finetune_pivotal(model, lat[0], pts, s, InferenceConfig(finetune_steps=20), seed=1)
        for k in model.params:
            assert np.array_equal(model.params[k].data, snapshot[k])


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path, small_trained):
        model, lat, _ = small_trained
        save_decoder(model, lat, tmp_path / "dec.tprm", shape_ids=[4, 9],
                     normalization={4: {"scale": 1.0, "offset": [0, 0, 0]}}, alpha=1e-4)
        back, lat2, side = load_decoder(tmp_path / "dec.tprm")
        assert np.array_equal(lat2, lat.astype(np.float32))
        assert back.cfg == model.cfg
        assert side["shape_ids"] == [4, 9]
        for k in model.params:
            assert np.array_equal(back.params[k].data, model.params[k].data)
