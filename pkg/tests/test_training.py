import numpy as np
import pytest

from gbt.autodiff import Adam, Tensor
from gbt.errors import (BadMagic, InsufficientViews, ShapeMismatch,
                        ShapeMismatchOnLoad, UnsupportedVersion)
from gbt.geometry import HarmonicConfig
from gbt.model import ModelConfig, init_params, trainable
from gbt.scenes import default_intrinsics, orbit_cameras, random_scene, render_scene, SceneViews
from gbt.training import (TrainConfig, evaluate, l2_ray_loss, load_checkpoint,
                          psnr, restore_params, save_checkpoint, train,
                          train_step)


def small_config(variant="gbt"):
    return ModelConfig(image_size=16, grid=2, latent_dim=32, num_heads=4,
                       encoder_layers=1, decoder_layers=1, mlp_hidden=(16,),
                       stem_channels=(4, 8, 8),
                       harmonic=HarmonicConfig(num_frequencies=3, min_exponent=-2),
                       variant=variant)


@pytest.fixture(scope="module")
def dataset():
    intr = default_intrinsics(16)
    scenes = []
    for seed in range(2):
        scene = random_scene(seed)
        poses = orbit_cameras(5, 2.0, 0.3)
        scenes.append(SceneViews(
            [render_scene(scene, p, intr, i) for i, p in enumerate(poses)]))
    return scenes


class TestMetrics:
    def test_l2_loss_value(self):
        pred = Tensor(np.array([[0.5, 0.5, 0.5]]), requires_grad=True)
        target = Tensor(np.array([[0.0, 1.0, 0.5]]))
        loss = l2_ray_loss(pred, target)
        assert float(loss.data) == pytest.approx((0.25 + 0.25) / 3, abs=1e-12)

    def test_l2_loss_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            l2_ray_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))))

    def test_psnr_known_value(self):
        a = np.zeros((3, 4, 4))
        b = np.full((3, 4, 4), 0.1)
        # MSE = 0.01 -> 20 dB.
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_identical_capped(self):
        a = np.random.default_rng(0).uniform(size=(3, 4, 4))
        assert psnr(a, a) == 99.0

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)))


class TestTrainLoop:
    def test_loss_decreases(self, dataset):
        cfg = small_config()
        tc = TrainConfig(context_views=2, rays_per_step=64, batch_scenes=1,
                         lr=1e-3, max_steps=30, seed=0)
        params = init_params(cfg, seed=0)
        history, _ = train(params, dataset, cfg, tc)
        assert len(history) == 30
        assert np.mean(history[-5:]) < np.mean(history[:5])

    def test_deterministic_given_seed(self, dataset):
        cfg = small_config()
        tc = TrainConfig(context_views=2, rays_per_step=32, batch_scenes=1,
                         lr=1e-3, max_steps=5, seed=7)

        def run():
            params = init_params(cfg, seed=7)
            history, _ = train(params, dataset, cfg, tc)
            return history, {k: v.data.copy() for k, v in params.items()}

        h1, p1 = run()
        h2, p2 = run()
        assert h1 == h2
        for k in p1:
            assert np.array_equal(p1[k], p2[k]), k

    def test_insufficient_views(self, dataset):
        cfg = small_config()
        tc = TrainConfig(context_views=5, rays_per_step=16, batch_scenes=1,
                         max_steps=1, seed=0)
        params = init_params(cfg, seed=0)
        opt = Adam(trainable(params), lr=tc.lr)
        with pytest.raises(InsufficientViews):
            train_step(params, dataset, opt, cfg, tc, np.random.default_rng(0))

    def test_progress_callback_cadence(self, dataset):
        cfg = small_config()
        tc = TrainConfig(context_views=2, rays_per_step=16, batch_scenes=1,
                         max_steps=6, seed=0, eval_every=2)
        calls = []
        params = init_params(cfg, seed=0)
        train(params, dataset, cfg, tc, progress=lambda s, l: calls.append(s))
        assert calls == [2, 4, 6]


class TestEvaluate:
    def test_rows_and_split_are_seeded(self, dataset):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        rows1, per_scene1 = evaluate(params, cfg, dataset, 2, seed=3, num_query=2)
        rows2, per_scene2 = evaluate(params, cfg, dataset, 2, seed=3, num_query=2)
        assert rows1 == rows2
        assert per_scene1 == per_scene2
        assert len(rows1) == 4  # 2 scenes x 2 queries
        assert all(len(r) == 3 for r in rows1)

    def test_perturb_receives_context_only(self, dataset):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        seen = []

        def perturb(poses):
            seen.append(len(poses))
            return poses

        evaluate(params, cfg, dataset, 2, seed=3, num_query=1, perturb=perturb)
        assert seen == [2, 2]

    def test_identity_perturb_matches_clean(self, dataset):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        _, clean = evaluate(params, cfg, dataset, 2, seed=3, num_query=1)
        _, same = evaluate(params, cfg, dataset, 2, seed=3, num_query=1,
                           perturb=lambda p: p)
        assert clean == same


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=1)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=17)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 17
        assert ckpt.config == cfg
        for name, tensor in params.items():
            assert np.array_equal(ckpt.params[name], tensor.data), name

    def test_save_twice_byte_identical(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=1)
        a = str(tmp_path / "a.ckpt")
        b = str(tmp_path / "b.ckpt")
        save_checkpoint(a, cfg, params, step=3)
        save_checkpoint(b, cfg, params, step=3)
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_optimizer_state_round_trip(self, tmp_path, dataset):
        cfg = small_config()
        tc = TrainConfig(context_views=2, rays_per_step=16, batch_scenes=1,
                         max_steps=3, seed=0)
        params = init_params(cfg, seed=0)
        _, opt = train(params, dataset, cfg, tc)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=3, optimizer=opt)
        ckpt = load_checkpoint(path)
        assert ckpt.optimizer_step == 3
        restored = restore_params(ckpt, cfg)
        opt2 = Adam(trainable(restored), lr=tc.lr)
        opt2.load_state_arrays(ckpt.optimizer, ckpt.optimizer_step)
        for k in opt.m:
            assert np.array_equal(opt2.m[k], opt.m[k]), k

    def test_restore_params_values(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=2)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=0)
        restored = restore_params(load_checkpoint(path), cfg)
        for k in params:
            assert np.array_equal(restored[k].data, params[k].data)

    def test_bad_magic_rejected(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=0)
        raw = bytearray(open(path, "rb").read())
        raw[:4] = b"NOPE"
        open(path, "wb").write(bytes(raw))
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_unsupported_version_rejected(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=0)
        raw = bytearray(open(path, "rb").read())
        raw[4:8] = (99).to_bytes(4, "little")
        open(path, "wb").write(bytes(raw))
        with pytest.raises(UnsupportedVersion):
            load_checkpoint(path)

    def test_shape_mismatch_on_load(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, seed=0)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, cfg, params, step=0)
        other = ModelConfig(image_size=16, grid=2, latent_dim=64, num_heads=4,
                            encoder_layers=1, decoder_layers=1, mlp_hidden=(16,),
                            stem_channels=(4, 8, 8),
                            harmonic=HarmonicConfig(3, -2))
        with pytest.raises(ShapeMismatchOnLoad):
            restore_params(load_checkpoint(path), other)
