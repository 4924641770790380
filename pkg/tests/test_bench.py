import numpy as np
import pytest

from prgflow.bench import (
    WarpRange,
    accuracy,
    gen_pair,
    identity_baseline,
    load_corpus,
    metric_errors,
    report_csv,
    run_benchmark,
)
from prgflow.errors import ConfigError
from prgflow.image import multi_octave_texture, warp_image
from prgflow.warps import WarpParams


def test_gamma_presets():
    g1 = WarpRange.preset("gamma1")
    g2 = WarpRange.preset("gamma2")
    assert (g1.s, g1.tx, g1.ty) == (0.25, 0.20, 0.20)
    assert (g2.s, g2.tx, g2.ty) == (0.50, 0.40, 0.40)
    with pytest.raises(ValueError):
        WarpRange.preset("gamma3")


def test_gen_pair_zero_range():
    src = multi_octave_texture(320, 0)
    p1, p2, truth = gen_pair(src, WarpRange(0.0, 0.0, 0.0), 5)
    assert np.allclose(truth.vector(), 0.0)
    assert np.allclose(p1.data, p2.data)


def test_gen_pair_construction_oracle():
    src = multi_octave_texture(320, 1, octaves=(32, 16, 8, 4))
    p1, p2, truth = gen_pair(src, WarpRange.preset("gamma1"), 7)
    rewarped = warp_image(p1, truth)
    joint = rewarped.mask & p2.mask
    assert joint.mean() > 0.3
    assert np.median(np.abs(rewarped.data[joint] - p2.data[joint])) <= 2.0 / 255.0


def test_gen_pair_deterministic():
    src = multi_octave_texture(320, 2)
    a = gen_pair(src, WarpRange.preset("gamma1"), 11)
    b = gen_pair(src, WarpRange.preset("gamma1"), 11)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[1].data, b[1].data)
    assert np.allclose(a[2].vector(), b[2].vector())


def test_gen_pair_undersized_source():
    with pytest.raises(ValueError):
        gen_pair(multi_octave_texture(128, 0), WarpRange.preset("gamma1"), 0)


def test_metric_errors_closed_forms():
    t = WarpParams.identity()
    p = WarpParams(s=0.1, tx=0.0, ty=0.0)
    es, et = metric_errors([p], [t], 128, 128)
    assert abs(es - 12.8) < 1e-9 and et == 0.0
    p = WarpParams(s=0.0, tx=0.1, ty=0.0)
    es, et = metric_errors([p], [t], 128, 128)
    assert es == 0.0 and abs(et - 6.4) < 1e-9
    es, et = metric_errors([t], [t])
    assert es == 0.0 and et == 0.0


def test_metric_errors_scale_covariant():
    rng = np.random.default_rng(0)
    preds = [WarpParams(*rng.uniform(-0.1, 0.1, 3)) for _ in range(9)]
    truths = [WarpParams(*rng.uniform(-0.1, 0.1, 3)) for _ in range(9)]
    e1 = metric_errors(preds, truths, 128, 128)
    e2 = metric_errors(preds, truths, 256, 256)
    assert np.allclose(np.array(e2), 2.0 * np.array(e1))


def test_accuracy():
    assert accuracy(0.0, 0.0, 10.0, 10.0) == 100.0
    assert accuracy(10.0, 10.0, 10.0, 10.0) == 0.0
    assert accuracy(5.0, 5.0, 10.0, 10.0) == 50.0
    with pytest.raises(ValueError):
        accuracy(1.0, 1.0, 0.0, 0.0)


def test_identity_baseline_zero_range():
    es, et = identity_baseline(WarpRange(0.0, 0.0, 0.0), n=100)
    assert es == 0.0 and et == 0.0


def test_identity_baseline_closed_form():
    # e_trans for uniform tx, ty: median of (W/2) * hypot(u, v)
    es, et = identity_baseline(WarpRange.preset("gamma1"), n=100_000, seed=0)
    assert abs(et - 10.21) < 0.2
    assert abs(es - 16.0) < 0.3  # median of 128 * |s|, s uniform in ±0.25


def test_truths_marginally_uniform():
    src = multi_octave_texture(320, 3)
    n = 2000
    ss = np.array([gen_pair(src, WarpRange.preset("gamma1"), i)[2].s for i in range(n)])
    # KS statistic against U(-0.25, 0.25); 0.045 is far beyond the 99.9%
    # critical value 1.95 / sqrt(n)
    u = np.sort((ss + 0.25) / 0.5)
    ks = np.abs(u - (np.arange(1, n + 1) - 0.5) / n).max()
    assert ks < 0.045


def test_load_corpus_procedural():
    corpus = load_corpus("procedural:3x320:5")
    assert len(corpus) == 3
    assert corpus[0].width == 320
    with pytest.raises(ConfigError):
        load_corpus("procedural:2x100:0")
    with pytest.raises(ConfigError):
        load_corpus("/nonexistent/dir")


def test_run_benchmark_identity_rows():
    corpus = load_corpus("procedural:4x320:6")
    ranges = [("gamma1", WarpRange.preset("gamma1")), ("gamma2", WarpRange.preset("gamma2"))]
    records = run_benchmark(corpus, ["identity"], ranges, n_pairs=40, seed=0)
    assert len(records) == 2
    for rec, (gname, rng_range) in zip(records, ranges):
        assert rec.estimator == "identity" and rec.gamma == gname
        ids, idt = identity_baseline(rng_range, seed=0)
        # Monte-Carlo noise on 40 pairs
        assert abs(rec.e_trans - idt) < 3.0
        assert abs(rec.accuracy) < 30.0


def test_run_benchmark_report_shape():
    corpus = load_corpus("procedural:4x320:7")
    ranges = [("gamma1", WarpRange.preset("gamma1"))]
    records = run_benchmark(corpus, ["identity", "fft"], ranges, n_pairs=10, seed=1)
    # identity row always present once per range
    assert [r.estimator for r in records] == ["identity", "fft"]
    text = report_csv(records)
    lines = text.strip().split("\n")
    assert lines[0].startswith("estimator,gamma,e_scale_px")
    assert len(lines) == 3


def test_run_benchmark_thread_invariance():
    corpus = load_corpus("procedural:4x320:8")
    ranges = [("gamma1", WarpRange.preset("gamma1"))]
    r1 = run_benchmark(corpus, ["fft"], ranges, n_pairs=12, seed=2, threads=1)
    r8 = run_benchmark(corpus, ["fft"], ranges, n_pairs=12, seed=2, threads=8)
    assert report_csv(r1) == report_csv(r8)
