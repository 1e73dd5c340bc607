"""End-to-end acceptance gate.

Eleven numbered criteria covering the alias-free FOV solver against its
brute-force oracle, the autodiff engine against finite differences, the
attention network's pooling invariants, a full synthetic training run for
all three architectures, the metric and statistics oracles, serialization
round-trips, and inference speed.  Each test prints one [PASS]/[FAIL]
line; run with `pytest tests/test_acceptance.py -s` to watch them.

The training criteria (6, 7) dominate the runtime: three architectures,
two boundary-pair instances each, 25 epochs over 500 synthetic stacks on
one CPU core.  Expect roughly half an hour.
"""

import contextlib
import time

import numpy as np
import pytest

from scanscribe import alias_sim, autodiff as ad, data, fov, models, stats
from scanscribe.errors import (
    ArchitectureMismatchError,
    BadMagicError,
    MissingTensorError,
    TruncatedFileError,
    VersionMismatchError,
)
from scanscribe.geometry import Box, Interval, boundary_error, iou


@contextlib.contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] criterion {number}: {description}")
        raise
    print(f"\n[PASS] criterion {number}: {description}")


def random_integer_config(rng, max_extent=256):
    o_t = int(rng.integers(0, 40))
    o_b = o_t + int(rng.integers(4, max_extent - 30))
    o_l = int(rng.integers(0, 40))
    o_r = o_l + int(rng.integers(4, max_extent - 30))
    r_t = int(rng.integers(o_t, o_b - 1))
    r_b = int(rng.integers(r_t + 1, o_b + 1))
    r_l = int(rng.integers(o_l, o_r - 1))
    r_r = int(rng.integers(r_l + 1, o_r + 1))
    return Box(o_t, o_b, o_l, o_r), Box(r_t, r_b, r_l, r_r)


# ---------------------------------------------------------------------------
# Shared training benchmark (criteria 6, 7, 11)
# ---------------------------------------------------------------------------

BENCH_SPEC = data.PhantomSpec(seed=11)          # 64x64, up to 8 slices
BENCH_COUNT = 500
BENCH_CFG = stats.TrainConfig(epochs=25, seed=0, lr=2e-3)


@pytest.fixture(scope="session")
def bench_records():
    return data.generate_dataset(BENCH_SPEC, BENCH_COUNT)


@pytest.fixture(scope="session")
def attention_bench(bench_records):
    start = time.monotonic()
    w_lr, _ = stats.train(models.ATTENTION, models.AXIS_LR, bench_records, BENCH_CFG)
    w_tb, _ = stats.train(models.ATTENTION, models.AXIS_TB, bench_records, BENCH_CFG)
    elapsed = time.monotonic() - start
    table = stats.evaluate(w_lr, w_tb, data.split_records(bench_records, "test"))
    return {"weights": (w_lr, w_tb), "elapsed": elapsed, "table": table}


@pytest.fixture(scope="session")
def baseline_bench(bench_records):
    results = {}
    for kind in (models.STACKED2D, models.CONV3D):
        w_lr, _ = stats.train(kind, models.AXIS_LR, bench_records, BENCH_CFG)
        w_tb, _ = stats.train(kind, models.AXIS_TB, bench_records, BENCH_CFG)
        table = stats.evaluate(w_lr, w_tb, data.split_records(bench_records, "test"))
        results[kind] = table
    return results


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_1_fov_minimality_vs_oracle():
    with criterion(1, "prescribed FOV passes all three oracle verdicts on "
                      "200 random integer configurations"):
        rng = np.random.default_rng(101)
        start = time.monotonic()
        for _ in range(200):
            mask, roi = random_integer_config(rng)
            axis = "rows" if rng.random() < 0.5 else "columns"
            window = fov.prescribe_slice(mask, roi, axis)
            verdicts = alias_sim.verify_prescription(mask, roi, window, axis)
            assert verdicts.contains_roi and verdicts.roi_alias_free \
                and verdicts.is_minimal, (mask, roi, window, verdicts)
        assert time.monotonic() - start < 10.0


def test_criterion_2_closed_form_matches_brute_force():
    with criterion(2, "alias_free_interval equals brute force on 200 "
                      "integer configurations with W > y/2"):
        rng = np.random.default_rng(102)
        start = time.monotonic()
        for _ in range(200):
            o0 = int(rng.integers(-20, 60))
            y = int(rng.integers(2, 200))
            width = int(rng.integers(y // 2 + 1, y + 40))
            interval = fov.alias_free_interval(Interval(o0, o0 + y), width)
            expected = {i for i in range(o0, o0 + y)
                        if interval.lo <= i and i + 1 <= interval.hi}
            got = alias_sim.brute_alias_free(range(o0, o0 + y), Interval(0, width))
            assert got == expected, (o0, y, width)
        assert time.monotonic() - start < 5.0


def test_criterion_3_fold_conservation():
    with criterion(3, "wrap_sum conserves total signal exactly over 1,000 folds"):
        rng = np.random.default_rng(103)
        for _ in range(1000):
            n = int(rng.integers(1, 120))
            width = int(rng.integers(1, 80))
            f0 = int(rng.integers(-40, 40))
            signal = rng.integers(0, 1000, size=n)
            result = alias_sim.wrap_sum(signal, Interval(f0, f0 + width))
            assert int(result.folded.sum()) == int(signal.sum())


def _layer_gradient_cases(rng):
    """(name, loss builder, trainable tensors) for every layer type."""

    def t(shape, name):
        return ad.Tensor(rng.normal(0, 1, size=shape), requires_grad=True, name=name)

    cases = []
    a, b = t((3, 4), "a"), t((3, 4), "b")
    cases.append(("add/mul", lambda: ad.mse_loss(
        ad.mul(ad.add(a, b), b), np.zeros((3, 4))), [a, b]))
    x = t((5,), "x")
    cases.append(("relu", lambda: ad.mse_loss(ad.relu(x), np.ones(5)), [x]))
    z = t((6,), "z")
    soft_target = rng.random(6)
    cases.append(("softmax", lambda: ad.mse_loss(
        ad.softmax(z), soft_target), [z]))
    fx, fw, fb = t((3, 7), "fx"), t((4, 7), "fw"), t((4,), "fb")
    cases.append(("fully_connected", lambda: ad.mse_loss(
        ad.fully_connected(fx, fw, fb), np.zeros((3, 4))), [fx, fw, fb]))
    sf, sa = t((4, 3, 2), "sf"), t((4,), "sa")
    cases.append(("sum_weighted", lambda: ad.mse_loss(
        ad.sum_weighted(sf, sa), np.zeros((3, 2))), [sf, sa]))
    gp = t((2, 3, 4, 4), "gp")
    cases.append(("global_avg_pool", lambda: ad.mse_loss(
        ad.global_avg_pool(gp), np.zeros((2, 3))), [gp]))
    cx, cw, cb = t((2, 2, 5, 5), "cx"), t((3, 2, 3, 3), "cw"), t((3,), "cb")
    cases.append(("conv2d", lambda: ad.mse_loss(
        ad.convolution(cx, cw, cb, stride=2), np.zeros((2, 3, 3, 3))), [cx, cw, cb]))
    vx, vw, vb = t((1, 2, 3, 4, 4), "vx"), t((2, 2, 3, 3, 3), "vw"), t((2,), "vb")
    cases.append(("conv3d", lambda: ad.mse_loss(
        ad.convolution(vx, vw, vb, stride=(1, 2, 2)),
        np.zeros((1, 2, 3, 2, 2))), [vx, vw, vb]))
    bx = t((4, 3, 2, 2), "bx")
    bg = ad.Tensor(1.0 + 0.1 * rng.normal(size=3), name="bg")
    bb = ad.Tensor(0.1 * rng.normal(size=3), name="bb")
    rm, rv = rng.normal(size=3), 1.0 + rng.random(3)
    cases.append(("batch_norm", lambda: ad.mse_loss(
        ad.batch_norm(bx, bg, bb, rm.copy(), rv.copy(), mode="train"),
        np.zeros((4, 3, 2, 2))), [bx, bg, bb]))
    return cases


def _max_rel_error(build_loss, params, rng, probes=6, eps=1e-5):
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward()
    worst = 0.0
    for p in params:
        n = p.data.size
        idx = sorted(rng.choice(n, size=min(n, probes), replace=False).tolist())
        numeric = ad.numerical_gradient(lambda: build_loss().data, p, idx, eps=eps)
        analytic = p.grad.reshape(-1)[idx]
        denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        worst = max(worst, float(np.abs(numeric - analytic).max() / denom))
    return worst


def test_criterion_4_gradient_checks():
    with criterion(4, "finite-difference gradient checks: every layer and "
                      "all three architectures, max rel err < 1e-3"):
        start = time.monotonic()
        rng = np.random.default_rng(104)
        for name, build_loss, params in _layer_gradient_cases(rng):
            rel = _max_rel_error(build_loss, params, rng)
            assert rel < 1e-3, (name, rel)

        stack = rng.random((2, 16, 16))
        target = np.array([0.3, 0.7])
        for kind in models.KINDS:
            mw = models.build_weights(
                models.ArchitectureConfig(kind, 16, 4, (4, 6, 8), 3), seed=0)
            for p in mw.params.values():
                # move off the symmetric init so no ReLU sits at its kink
                p.data = (p.data + rng.normal(0, 0.1, size=p.data.shape)
                          ).astype(np.float64)

            def build_loss():
                return ad.mse_loss(models.forward(stack, mw, mode="train"), target)

            rel = _max_rel_error(build_loss, list(mw.params.values()), rng,
                                 probes=2, eps=1e-4)
            assert rel < 1e-3, (kind, rel)
        assert time.monotonic() - start < 60.0


def test_criterion_5_architecture_invariants():
    with criterion(5, "attention pooling invariants and parameter-count "
                      "ordering"):
        config = models.ArchitectureConfig(
            "attention", image_size=16, max_slices=8, widths=(4, 6, 8),
            attn_hidden=3)
        mw = models.build_weights(config, seed=2)
        rng = np.random.default_rng(105)
        for _ in range(50):
            n = int(rng.integers(1, 5))  # keep room to duplicate
            stack = rng.random((n, 16, 16))
            out, alpha = models.forward_attention(stack, mw)
            assert abs(alpha.sum() - 1.0) < 1e-6
            assert (alpha > 0).all()
            perm = rng.permutation(n)
            out_p, alpha_p = models.forward_attention(stack[perm], mw)
            assert np.abs(out_p.data - out.data).max() < 1e-5
            assert np.abs(alpha_p - alpha[perm]).max() < 1e-5
            out_d, _ = models.forward_attention(
                np.concatenate([stack, stack]), mw)
            assert np.abs(out_d.data - out.data).max() < 1e-5

        for n in range(1, config.max_slices + 1):
            out = models.forward(rng.random((n, 16, 16)), mw)
            assert out.data.shape == (2,)

        counts = {k: models.build_weights(models.ArchitectureConfig(k)).parameter_count()
                  for k in models.KINDS}
        assert counts[models.ATTENTION] < counts[models.STACKED2D]
        assert counts[models.ATTENTION] < counts[models.CONV3D]


def test_criterion_6_end_to_end_training(attention_bench):
    with criterion(6, "attention model on 500 synthetic stacks: held-out "
                      "IoU >= 0.75, boundary error <= 3.5 px, <= 15 min"):
        table = attention_bench["table"]
        print(f"\n  attention: iou={table.iou_mean:.4f} "
              f"boundary_error={table.boundary_error_mean:.3f}px "
              f"train_time={attention_bench['elapsed']:.0f}s")
        assert table.iou_mean >= 0.75
        assert table.boundary_error_mean <= 3.5
        assert attention_bench["elapsed"] <= 15 * 60
        assert BENCH_CFG.seed == 0 and BENCH_SPEC.seed == 11  # pinned seeds


def test_criterion_7_baseline_ordering(attention_bench, baseline_bench):
    with criterion(7, "attention held-out IoU within 0.02 of (or above) "
                      "both baselines"):
        attn = attention_bench["table"].iou_mean
        for kind, table in baseline_bench.items():
            print(f"\n  {kind}: iou={table.iou_mean:.4f}")
            assert attn >= table.iou_mean - 0.02, (kind, attn, table.iou_mean)


def test_criterion_8_metric_oracles():
    with criterion(8, "iou matches rasterized counting on 100 box pairs; "
                      "boundary_error matches hand arithmetic"):
        rng = np.random.default_rng(108)
        grid = np.arange(-10, 110)
        yy, xx = np.meshgrid(grid, grid, indexing="ij")

        def rasterized(a, b):
            def inside(box):
                return ((yy >= box.top) & (yy < box.bottom)
                        & (xx >= box.left) & (xx < box.right))
            ma, mb = inside(a), inside(b)
            union = np.count_nonzero(ma | mb)
            return 0.0 if union == 0 else np.count_nonzero(ma & mb) / union

        for _ in range(100):
            t, l = rng.integers(0, 50, size=2)
            a = Box(t, t + rng.integers(1, 40), l, l + rng.integers(1, 40))
            t, l = rng.integers(0, 50, size=2)
            b = Box(t, t + rng.integers(1, 40), l, l + rng.integers(1, 40))
            assert abs(iou(a, b) - rasterized(a, b)) <= 1.0 / grid.size ** 2

        assert boundary_error(Box(10, 20, 10, 20), Box(12, 18, 14, 26)) == 3.5
        assert boundary_error(Box(1, 2, 3, 4), Box(1, 2, 3, 4)) == 0.0


def _permutation_p(a, b, n_perm=20000, seed=0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    observed = abs(a.mean() - b.mean())
    pooled = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        rng.shuffle(pooled)
        if abs(pooled[: a.size].mean() - pooled[a.size:].mean()) >= observed - 1e-12:
            hits += 1
    return hits / n_perm


def test_criterion_9_statistics():
    with criterion(9, "t-test and Wilson interval reproduce reference "
                      "values; t-test agrees with permutation"):
        res = stats.t_test([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0])
        assert res.t == pytest.approx(-1.0, abs=1e-12)
        assert res.df == 8
        assert res.p == pytest.approx(0.3466, abs=1e-4)

        from test_stats import TestTTest
        for a, b in TestTTest.PERMUTATION_PAIRS:
            assert stats.t_test(a, b).p == pytest.approx(
                _permutation_p(a, b), abs=0.02)

        ci = stats.proportion_ci(69, 80, 0.80, stats.WILSON)
        assert ci.lo == pytest.approx(0.806, abs=1e-3)
        assert ci.hi == pytest.approx(0.905, abs=1e-3)


def test_criterion_10_serialization(tmp_path):
    with criterion(10, "weights and dataset round-trip bit-exactly; "
                       "corruption yields distinct errors"):
        config = models.ArchitectureConfig(
            "attention", image_size=16, max_slices=4, widths=(4, 6, 8),
            attn_hidden=3)
        mw = models.build_weights(config, seed=9)
        path = tmp_path / "w.sswt"
        models.save_weights(mw, path)
        loaded = models.load_weights(path)
        for k in mw.params:
            assert np.array_equal(loaded.params[k].data, mw.params[k].data)
        for k in mw.stats:
            assert np.array_equal(loaded.stats[k], mw.stats[k])

        bad = tmp_path / "bad.sswt"
        bad.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            models.load_weights(bad)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        bad.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            models.load_weights(bad)
        bad.write_bytes(path.read_bytes()[:40])
        with pytest.raises(TruncatedFileError):
            models.load_weights(bad)
        crippled = mw.clone()
        del crippled.params["a2.w"]
        models.save_weights(crippled, bad)
        with pytest.raises(MissingTensorError):
            models.load_weights(bad)
        with pytest.raises(ArchitectureMismatchError):
            models.load_weights(path, expect_kind=models.CONV3D)

        spec = data.PhantomSpec(size=16, min_slices=2, max_slices=3,
                                organ_half_axes=(0.08, 0.14), roi_margin=1.0,
                                seed=10)
        records = data.generate_dataset(spec, 4)
        data.save_dataset(records, tmp_path / "ds")
        assert data.load_dataset(tmp_path / "ds") == records


def test_criterion_11_inference_speed(bench_records):
    with criterion(11, "attention inference < 1 s per stack; conv3d slower "
                       "at matched widths"):
        config_args = dict(image_size=64, max_slices=8, widths=(16, 32, 64))
        attn = models.build_weights(
            models.ArchitectureConfig("attention", attn_hidden=8, **config_args))
        c3d = models.build_weights(
            models.ArchitectureConfig("conv3d", **config_args))
        stacks = [models.normalize_stack(r.slices) for r in bench_records[:10]]

        def time_model(mw):
            models.forward(stacks[0], mw)  # warm-up
            start = time.monotonic()
            for stack in stacks:
                models.forward(stack, mw)
            return (time.monotonic() - start) / len(stacks)

        t_attn = time_model(attn)
        t_c3d = time_model(c3d)
        print(f"\n  per-stack inference: attention {t_attn * 1e3:.1f} ms, "
              f"conv3d {t_c3d * 1e3:.1f} ms")
        assert t_attn < 1.0
        assert t_c3d > t_attn
