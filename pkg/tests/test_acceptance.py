"""Acceptance gate.

Ten checks covering the gradient suite, ray geometry oracles, attention
structure, training trends, and on-disk format determinism. Each test
prints a single PASS/FAIL line with the measured numbers.

The trend checks (7-9) share one procedurally generated benchmark: 64
training scenes plus 10 held-out scenes, 24 views each at 64x64, with
models trained at reduced width so the whole gate stays CPU-friendly.
The overfit check (6) trains on a single scene. Every run is
deterministic, so the recorded numbers reproduce exactly.
"""
import hashlib
import math
import os
import time
from types import SimpleNamespace

import numpy as np
import pytest

from gbt import autodiff as ad
from gbt.autodiff import Adam, Tensor
from gbt.errors import BadMagic
from gbt.geometry import (CameraPose, RaySet, look_at_pose, perturb_pose,
                          ray_distance, ray_from_origin_dir, rotation_angle,
                          rotation_exp)
from gbt.model import (ModelConfig, _bias_tensor, gbt_decoder_layer,
                       gbt_encoder_layer, init_params, render_view, trainable)
from gbt.scenes import (SceneViews, default_intrinsics, load_dataset,
                        make_dataset, orbit_cameras, random_scene, render_scene)
from gbt.training import (TrainConfig, evaluate, load_checkpoint, psnr,
                          save_checkpoint, train_step)
from gbt.experiments import run_ablation, run_noise_sweep, write_csv

BENCH_SEED = 11
ABLATION_STEPS = 400
OVERFIT_MAX_STEPS = 5000
OVERFIT_CTX_DB = 28.0
OVERFIT_HELD_DB = 20.0


def reduced_model(variant="gbt"):
    """64px model at reduced width so the trend criteria run on one core."""
    return ModelConfig(image_size=64, grid=8, latent_dim=96, num_heads=6,
                       encoder_layers=2, decoder_layers=1, mlp_hidden=(64, 32),
                       stem_channels=(16, 32, 64), variant=variant)


def report(num, ok, detail):
    print(f"\n[criterion {num:2d}] {'PASS' if ok else 'FAIL'} {detail}")
    return ok


# --- shared trained benchmark (criteria 7, 8, 9) --------------------------

@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    data = str(root / "data")
    make_dataset(data, 74, 24, 64, seed=BENCH_SEED)
    ds = load_dataset(data)
    tc = TrainConfig(context_views=3, rays_per_step=512, batch_scenes=2,
                     lr=1e-3, max_steps=ABLATION_STEPS, seed=0)
    rows, means, trained = run_ablation(ds[:64], ds[64:],
                                        ("gbt", "gbt_nb", "srt_star"),
                                        reduced_model(), tc)
    return SimpleNamespace(eval_scenes=ds[64:], means=means, trained=trained,
                           train_cfg=tc)


def test_criterion_1_gradient_suite():
    from gbt.gradsuite import run_grad_suite
    t0 = time.time()
    worst, _ = run_grad_suite()
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    assert report(1, ok, f"gradient suite: max rel err {worst:.3e} (< 1e-4), "
                         f"{elapsed:.1f}s (< 60s)")


def test_criterion_2_ray_distance_oracle():
    def oracle(o1, d1, o2, d2):
        n = np.cross(d1, d2)
        nn = np.linalg.norm(n)
        w = o2 - o1
        if nn == 0.0:
            perp = w - (w @ d1) * d1
            return float(np.linalg.norm(perp))
        return float(abs(w @ n) / nn)

    rng = np.random.default_rng(100)

    def rand_ray():
        o = rng.uniform(-3, 3, size=3)
        d = rng.normal(size=3)
        return o, d / np.linalg.norm(d)

    pairs = []
    for _ in range(880):
        pairs.append((rand_ray(), rand_ray()))
    # Near-parallel pairs exercising the branch switch: exactly collinear
    # directions take the parallel branch, tiny tilts stay on the skew side.
    for i in range(60):
        o1, d1 = rand_ray()
        o2 = o1 + rng.uniform(-2, 2, size=3)
        pairs.append(((o1, d1), (o2, d1 if i % 2 else -d1)))
    for i in range(60):
        o1, d1 = rand_ray()
        o2 = o1 + rng.uniform(-2, 2, size=3)
        axis = np.cross(d1, rng.normal(size=3))
        axis /= np.linalg.norm(axis)
        angle = (1e-7, 1e-6, 1e-5, 1e-4)[i % 4]
        d2 = rotation_exp(angle * axis) @ d1
        pairs.append(((o1, d1), (o2, d2 / np.linalg.norm(d2))))

    worst = 0.0
    for (o1, d1), (o2, d2) in pairs:
        got = ray_distance(ray_from_origin_dir(o1, d1), ray_from_origin_dir(o2, d2))
        worst = max(worst, abs(got - oracle(o1, d1, o2, d2)))
    ok = worst < 1e-6
    assert report(2, ok, f"ray-distance oracle: {len(pairs)} pairs "
                         f"(120 near-parallel), max abs err {worst:.2e} (< 1e-6)")


def test_criterion_3_plucker_invariants():
    rng = np.random.default_rng(101)

    def rand_ray():
        o = rng.uniform(-3, 3, size=3)
        d = rng.normal(size=3)
        return o, d / np.linalg.norm(d)

    worst_shift = worst_ortho = worst_rigid = 0.0
    for _ in range(100):
        o, d = rand_ray()
        t = rng.uniform(-10, 10)
        a = ray_from_origin_dir(o, d)
        b = ray_from_origin_dir(o + t * d, d)
        worst_shift = max(worst_shift, float(np.max(np.abs(a.m - b.m))))
        worst_ortho = max(worst_ortho, abs(a.d @ a.m))

        o2, d2 = rand_ray()
        rot = rotation_exp(rng.normal(size=3))
        tr = rng.uniform(-5, 5, size=3)
        before = ray_distance(a, ray_from_origin_dir(o2, d2))
        after = ray_distance(ray_from_origin_dir(rot @ o + tr, rot @ d),
                             ray_from_origin_dir(rot @ o2 + tr, rot @ d2))
        worst_rigid = max(worst_rigid, abs(after - before))
    worst = max(worst_shift, worst_ortho, worst_rigid)
    ok = worst < 1e-8
    assert report(3, ok, f"line-coordinate invariants: 100 cases each, "
                         f"origin-shift {worst_shift:.1e} / m.d {worst_ortho:.1e} / "
                         f"rigid {worst_rigid:.1e} (< 1e-8)")


def test_criterion_4_variant_equivalence():
    cfg = ModelConfig(image_size=32, grid=4, latent_dim=64, num_heads=4,
                      encoder_layers=2, decoder_layers=1, mlp_hidden=(32,),
                      stem_channels=(8, 16, 32))
    intr = default_intrinsics(32)
    scene = random_scene(4)
    poses = orbit_cameras(4, 2.0, 0.3)
    views = [render_scene(scene, p, intr, i) for i, p in enumerate(poses)]
    images = np.stack([v.image for v in views[:3]])
    ctx = [v.pose for v in views[:3]]

    gbt = init_params(cfg, seed=9)
    for name in list(gbt):
        if name.endswith(".gamma"):
            gbt[name].data = np.zeros_like(gbt[name].data)
    from gbt.experiments import _with_variant
    nb_cfg = _with_variant(cfg, "gbt_nb")
    nb = init_params(nb_cfg, seed=9)
    a = render_view(images, ctx, intr, views[3].pose, gbt, cfg)
    b = render_view(images, ctx, intr, views[3].pose, nb, nb_cfg)
    diff = float(np.max(np.abs(a - b)))
    ok = diff < 1e-6
    assert report(4, ok, f"variant equivalence: gamma=0 vs no-bias render "
                         f"max channel diff {diff:.2e} (< 1e-6)")


def test_criterion_5_attention_structure():
    cfg = reduced_model()
    params = init_params(cfg, seed=10, dtype=np.float64)
    rng = np.random.default_rng(102)

    tokens = Tensor(rng.standard_normal((14, cfg.latent_dim)))
    dmat = rng.uniform(0, 2, size=(14, 14))
    dmat = (dmat + dmat.T) / 2
    np.fill_diagonal(dmat, 0.0)
    dist = Tensor(dmat)
    out = gbt_encoder_layer(tokens, dist, params, "enc.0", cfg).data
    perm = rng.permutation(14)
    out_p = gbt_encoder_layer(Tensor(tokens.data[perm]),
                              Tensor(dmat[perm][:, perm]),
                              params, "enc.0", cfg).data
    equiv_err = float(np.max(np.abs(out_p - out[perm])))

    queries = Tensor(rng.standard_normal((6, cfg.latent_dim)))
    memory = Tensor(rng.standard_normal((14, cfg.latent_dim)))
    cross = Tensor(rng.uniform(0, 2, size=(6, 14)))
    dec = gbt_decoder_layer(queries, memory, cross, params, "dec.0", cfg).data
    mperm = rng.permutation(14)
    dec_p = gbt_decoder_layer(queries, Tensor(memory.data[mperm]),
                              Tensor(cross.data[:, mperm]),
                              params, "dec.0", cfg).data
    inv_err = float(np.max(np.abs(dec_p - dec)))

    mono_ok = True
    gamma = Tensor(np.ones(()))
    for _ in range(200):
        k = int(rng.integers(3, 30))
        d = rng.uniform(0, 4, size=(1, k))
        while len(np.unique(d)) < k:
            d = rng.uniform(0, 4, size=(1, k))
        logits = Tensor(np.full((1, k), float(rng.normal())))
        w = ad.softmax_with_bias(logits, _bias_tensor(gamma, Tensor(d))).data[0]
        order = np.argsort(d[0])
        mono_ok = mono_ok and bool(np.all(np.diff(w[order]) < 0))

    ok = equiv_err < 1e-6 and inv_err < 1e-6 and mono_ok
    assert report(5, ok, f"attention structure: equivariance {equiv_err:.1e} / "
                         f"memory invariance {inv_err:.1e} (< 1e-6), "
                         f"monotone bias 200/200 {'ok' if mono_ok else 'VIOLATED'}")


def test_criterion_6_overfit_single_scene():
    t0 = time.time()
    cfg = reduced_model()
    intr = default_intrinsics(64)
    scene = random_scene(14)
    n_views = 12
    poses = orbit_cameras(n_views, 2.0, 0.35)
    views = [render_scene(scene, p, intr, i) for i, p in enumerate(poses)]
    sv = SceneViews(views)

    # Held-out pose halfway between the first two training azimuths.
    az = 2.0 * math.pi * 0.5 / n_views
    el = 0.35
    c = 2.0 * np.array([math.cos(el) * math.cos(az), math.sin(el),
                        math.cos(el) * math.sin(az)])
    held_pose = look_at_pose(c, (0.0, 0.0, 0.0))
    held_view = render_scene(scene, held_pose, intr, n_views)

    tc = TrainConfig(context_views=3, rays_per_step=1024, batch_scenes=1,
                     lr=2e-3, seed=14)
    params = init_params(cfg, seed=14)
    opt = Adam(trainable(params), lr=tc.lr)
    rng = np.random.default_rng(tc.seed)

    ctx_ids = (0, 4, 8)
    images = np.stack([views[i].image for i in ctx_ids])
    ctx_poses = [views[i].pose for i in ctx_ids]

    def measure():
        cvals = [psnr(render_view(images, ctx_poses, intr, views[i].pose,
                                  params, cfg), views[i].image)
                 for i in ctx_ids]
        hval = psnr(render_view(images, ctx_poses, intr, held_pose, params, cfg),
                    held_view.image)
        return float(np.mean(cvals)), hval

    step = 0
    ctx_db = held_db = 0.0
    while step < OVERFIT_MAX_STEPS:
        for _ in range(500):
            step += 1
            # Halve the learning rate every 1000 steps; at a constant rate
            # the context PSNR plateaus short of the target.
            opt.lr = tc.lr * (0.5 ** (step // 1000))
            train_step(params, [sv], opt, cfg, tc, rng)
        ctx_db, held_db = measure()
        if ctx_db >= OVERFIT_CTX_DB and held_db >= OVERFIT_HELD_DB:
            break
    elapsed = time.time() - t0
    ok = (ctx_db >= OVERFIT_CTX_DB and held_db >= OVERFIT_HELD_DB
          and step <= 20000 and elapsed <= 1800)
    assert report(6, ok, f"single-scene overfit: context {ctx_db:.2f} dB "
                         f"(>= {OVERFIT_CTX_DB}), held-out {held_db:.2f} dB "
                         f"(>= {OVERFIT_HELD_DB}), {step} steps, {elapsed:.0f}s")


def test_criterion_7_ablation_direction(benchmark):
    m = benchmark.means
    ok = m["gbt"] > m["gbt_nb"] > m["srt_star"]
    assert report(7, ok, "ablation direction: "
                  f"gbt {m['gbt']:.3f} > gbt_nb {m['gbt_nb']:.3f} > "
                  f"srt_star {m['srt_star']:.3f} dB "
                  f"({ABLATION_STEPS} steps, shared seed)")


def test_criterion_8_noise_trend(benchmark):
    params, cfg = benchmark.trained["gbt"]
    sigmas = (0.0, 0.02, 0.05, 0.1)
    rows = run_noise_sweep(params, cfg, benchmark.eval_scenes, sigmas,
                           benchmark.train_cfg.context_views, seed=0)
    vals = [p for _, p in rows]
    trend_ok = all(vals[i + 1] <= vals[i] + 0.1 for i in range(len(vals) - 1))

    rng = np.random.default_rng(103)
    angles = [rotation_angle(perturb_pose(CameraPose.identity(), 0.1, rng).rotation)
              for _ in range(10000)]
    mean_angle = float(np.mean(angles))
    angle_ok = 0.135 <= mean_angle <= 0.185

    ok = trend_ok and angle_ok
    table = ", ".join(f"s={s:g}: {p:.2f}" for s, p in rows)
    assert report(8, ok, f"noise trend: {table} dB (non-increasing +-0.1); "
                         f"mean rotation at s=0.1: {mean_angle:.3f} rad "
                         f"(in [0.135, 0.185], 10k samples)")


def test_criterion_9_viewpoint_distance_trend(benchmark):
    # Per-view PSNR is dominated by what each ground-truth view happens to
    # contain, so the comparison needs an eval set large enough for content
    # to average out, and scenes cluttered enough that viewpoints actually
    # differ in what they can see. Unjittered turntables keep per-view
    # difficulty identically distributed across azimuths.
    params, cfg = benchmark.trained["gbt"]
    context = (6, 12, 18)
    adjacent = (5, 7, 11, 13, 17, 19)
    farthest = 0  # largest circular distance to the context set on 24 views
    num_scenes = 200
    intr = default_intrinsics(64)
    poses = orbit_cameras(24, 2.0, 0.35)
    need = sorted(set(context) | set(adjacent) | {farthest})
    scenes = []
    seed = 1000
    while len(scenes) < num_scenes:
        scene = random_scene(seed)
        seed += 1
        if len(scene.primitives) < 5:
            continue
        scenes.append({i: render_scene(scene, poses[i], intr, i)
                       for i in need})
    near_vals, far_vals = [], []
    for vs in scenes:
        images = np.stack([vs[i].image for i in context])
        cposes = [vs[i].pose for i in context]
        near_vals.extend(
            psnr(render_view(images, cposes, intr, vs[i].pose, params, cfg),
                 vs[i].image)
            for i in adjacent)
        far_vals.append(
            psnr(render_view(images, cposes, intr, vs[farthest].pose,
                             params, cfg), vs[farthest].image))
    near = float(np.mean(near_vals))
    far = float(np.mean(far_vals))
    ok = near > far
    assert report(9, ok, f"viewpoint trend: context-adjacent {near:.3f} dB > "
                         f"farthest view {far:.3f} dB over {num_scenes} scenes")


def _tree_digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_criterion_10_determinism_and_formats(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    make_dataset(str(a), 2, 4, 16, seed=5)
    make_dataset(str(b), 2, 4, 16, seed=5)
    data_ok = _tree_digest(a) == _tree_digest(b)

    cfg = ModelConfig(image_size=16, grid=2, latent_dim=32, num_heads=4,
                      encoder_layers=1, decoder_layers=1, mlp_hidden=(16,),
                      stem_channels=(4, 8, 8))
    params = init_params(cfg, seed=5)
    p1 = str(tmp_path / "m1.ckpt")
    p2 = str(tmp_path / "m2.ckpt")
    save_checkpoint(p1, cfg, params, step=9)
    save_checkpoint(p2, cfg, params, step=9)
    ckpt = load_checkpoint(p1)
    round_trip_ok = all(np.array_equal(ckpt.params[k], params[k].data)
                        for k in params)
    bytes_ok = open(p1, "rb").read() == open(p2, "rb").read()

    c1 = tmp_path / "m1.csv"
    c2 = tmp_path / "m2.csv"
    rows = [(0, 1, f"{29.123456:.6f}"), (0, 2, f"{27.5:.6f}")]
    write_csv(str(c1), ["scene", "query_index", "psnr"], rows)
    write_csv(str(c2), ["scene", "query_index", "psnr"], rows)
    csv_ok = c1.read_bytes() == c2.read_bytes()

    raw = bytearray(open(p1, "rb").read())
    raw[:4] = b"JUNK"
    bad = str(tmp_path / "bad.ckpt")
    open(bad, "wb").write(bytes(raw))
    try:
        load_checkpoint(bad)
        magic_ok = False
    except BadMagic:
        magic_ok = True

    ok = data_ok and round_trip_ok and bytes_ok and csv_ok and magic_ok
    assert report(10, ok, "determinism/formats: dataset regen "
                  f"{'identical' if data_ok else 'DIFFERS'}, checkpoint "
                  f"round-trip {'bit-exact' if round_trip_ok and bytes_ok else 'DIFFERS'}, "
                  f"csv {'identical' if csv_ok else 'DIFFERS'}, bad magic "
                  f"{'rejected' if magic_ok else 'ACCEPTED'}")
