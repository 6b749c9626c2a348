import math

import numpy as np
import pytest
from scipy import stats as sst

from rbpinn import metrics as M


def brute(pred, ref):
    """Single-pass loop implementation used as the reference."""
    n = len(ref)
    se = ae = sp = sr = spp = srr = spr = 0.0
    for a, b in zip(pred, ref):
        se += (a - b) ** 2
        ae += abs(a - b)
        sp += a
        sr += b
        spp += a * a
        srr += b * b
        spr += a * b
    mp, mr = sp / n, sr / n
    vp, vr = spp / n - mp * mp, srr / n - mr * mr
    cov = spr / n - mp * mr
    return {
        "rmse": math.sqrt(se / n),
        "mae": ae / n,
        "mu_err": abs(mp - mr) / abs(mr) * 100,
        "sigma_err": abs(math.sqrt(vp) - math.sqrt(vr)) / math.sqrt(vr) * 100,
        "r_corr": cov / math.sqrt(vp * vr),
        "r2": 1 - se / (n * vr),
    }


class TestFieldStats:
    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ref = rng.normal(0.7, 1.0, 500)
        pred = ref + rng.normal(0.05, 0.3, 500)
        got = M.field_stats(pred, ref)
        want = brute(pred.tolist(), ref.tolist())
        for k, v in want.items():
            assert getattr(got, k) == pytest.approx(v, rel=1e-12, abs=1e-12), k

    def test_hand_vector(self):
        s = M.field_stats([0.1, 1.1, 1.9, 3.0], [0, 1, 2, 3])
        # errors (0.1, 0.1, -0.1, 0): squares sum 0.03, abs sum 0.3, SS_tot 5
        assert s.rmse == pytest.approx(math.sqrt(0.0075), rel=1e-14)
        assert s.mae == pytest.approx(0.075, rel=1e-14)
        assert s.r2 == pytest.approx(1 - 0.03 / 5, rel=1e-14)
        assert s.mu_err == pytest.approx(0.025 / 1.5 * 100, rel=1e-12)
        # pred centred: (-1.425, -0.425, 0.375, 1.475)
        cov = (1.5 * 1.425 + 0.5 * 0.425 + 0.5 * 0.375 + 1.5 * 1.475) / 4
        sp = math.sqrt((1.425**2 + 0.425**2 + 0.375**2 + 1.475**2) / 4)
        assert s.r_corr == pytest.approx(cov / (sp * math.sqrt(1.25)), rel=1e-12)

    def test_identity(self):
        s = M.field_stats([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
        assert (s.rmse, s.mae, s.mu_err, s.sigma_err) == (0, 0, 0, 0)
        assert s.r_corr == pytest.approx(1.0) and s.r2 == 1.0

    def test_pressure_gauge_invariance(self):
        rng = np.random.default_rng(1)
        ref, noise = rng.normal(size=200), rng.normal(0, 0.1, 200)
        a = M.field_stats(ref + noise, ref, "pressure")
        b = M.field_stats(ref + noise + 123.4, ref, "pressure")
        for k in M.STAT_NAMES:
            assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-9, abs=1e-12)
        assert a.mu_err is None
        z = M.field_stats(ref + 5.0, ref, "pressure")
        assert z.rmse == pytest.approx(0.0, abs=1e-14) and z.r2 == pytest.approx(1.0)

    def test_per_snapshot_gauge(self):
        ref = np.arange(8.0)
        groups = np.repeat([0, 1], 4)
        pred = ref + np.where(groups == 0, 3.0, -7.0)
        assert M.field_stats(pred, ref, "pressure", groups).rmse == pytest.approx(0.0, abs=1e-14)
        assert M.field_stats(pred, ref, "pressure").rmse > 1

    def test_not_computable(self):
        s = M.field_stats([1.0, 2.0], [3.0, 3.0])
        assert s.sigma_err is None and s.r_corr is None and s.r2 is None
        s = M.field_stats([0.1, -0.1], [1.0, -1.0])
        assert s.mu_err is None

    def test_errors(self):
        with pytest.raises(ValueError):
            M.field_stats([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            M.field_stats([1, 2], [1, 2], kind="vector")


class TestAggregate:
    def test_two_fields(self):
        a = M.aggregate([M.FieldStats(1, 0, None, 1, 1, 1), M.FieldStats(3, 2, 4, 1, 0.5, 0.5)])
        assert a.armse == 2 and a.amae == 1 and a.mu_err == 4 and a.ar2 == 0.75

    def test_single_field(self):
        s = M.field_stats([0.1, 1.1, 1.9, 3.0], [0, 1, 2, 3])
        a = M.aggregate({"T": s})
        assert (a.armse, a.amae, a.mu_err, a.sigma_err, a.ar_corr, a.ar2) == (
            s.rmse, s.mae, s.mu_err, s.sigma_err, s.r_corr, s.r2)

    def test_reported_table_column(self):
        rmse = (3.336e-3, 1.778e-3, 1.953e-3, 3.316e-3, 8.904e-4)
        a = M.aggregate([M.FieldStats(r, r, None, None, None, None) for r in rmse])
        assert round(a.armse, 6) == 2.255e-3

    def test_empty(self):
        with pytest.raises(ValueError):
            M.aggregate([])


class TestRelativeL2:
    def test_examples(self):
        ref = np.array([1.0, -2.0, 3.0, 0.5])
        assert M.relative_l2(ref, ref) == 0
        assert M.relative_l2(1.01 * ref, ref) == pytest.approx(1.0, rel=1e-10)
        for c in (0.3, 1.7, 4.0):
            assert M.relative_l2(c * ref, ref) == pytest.approx(abs(c - 1) * 100, rel=1e-12)

    def test_orthogonal_perturbation(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(size=100)
        e = rng.normal(size=100)
        e -= e @ ref / (ref @ ref) * ref
        e *= 0.05 * np.linalg.norm(ref) / np.linalg.norm(e)
        assert M.relative_l2(ref + e, ref) == pytest.approx(5.0, rel=1e-12)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            M.relative_l2([1.0], [0.0])

    def test_pressure_centred(self):
        ref = np.array([1.0, 2.0, 3.0])
        assert M.relative_l2(ref + 10, ref, pressure=True) == pytest.approx(0.0, abs=1e-12)


class TestProfiles:
    def test_identity_and_single_snapshot(self):
        ref = np.random.default_rng(0).normal(size=(5, 4, 3))
        assert np.all(M.temporal_l2_profile(ref, ref) == 0)
        pred = ref.copy()
        pred[2] *= 1.1
        prof = M.temporal_l2_profile(pred, ref)
        assert np.argmax(prof) == 2 and np.all(np.delete(prof, 2) == 0)
        assert prof[2] == pytest.approx(0.1)

    def test_normalized_by_baseline(self):
        ref = np.random.default_rng(0).normal(size=(6, 10))
        b = M.temporal_l2_profile(ref * 1.2, ref)
        a = M.temporal_l2_profile(ref * 1.05, ref, baseline=b)
        assert M.temporal_l2_profile(ref * 1.2, ref, baseline=b).max() == 1.0
        assert a.max() < 1

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            M.temporal_l2_profile(np.ones((3, 4)), np.ones((3, 5)))

    def test_databases(self, small_db):
        prof = M.temporal_l2_profile(small_db, small_db, "T")
        assert prof.shape == (len(small_db.times),) and np.all(prof == 0)


class TestPdf:
    def test_unit_integral(self):
        d = M.pdf_estimate(np.random.default_rng(0).normal(size=999), bins=37)
        assert np.sum(d.density * np.diff(d.edges)) == pytest.approx(1.0, rel=1e-14)

    def test_uniform(self):
        d = M.pdf_estimate(np.random.default_rng(0).uniform(size=200000), bins=10)
        assert np.allclose(d.density, 1.0, atol=0.03)

    def test_gaussian_bands(self):
        n, bins = 100000, 40
        x = np.random.default_rng(7).normal(size=n)
        d = M.pdf_estimate(x, bins=bins, range=(-4, 4))
        w = np.diff(d.edges)
        p = np.diff(sst.norm.cdf(d.edges))
        # expected fraction inside [-4, 4] is ~1; five-sigma binomial band per bin
        band = 5 * np.sqrt(p * (1 - p) / n) / w + 1e-12
        assert np.all(np.abs(d.density - p / w) <= band + 1e-4)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            M.pdf_estimate([1.0, 1.0])
        with pytest.raises(ValueError):
            M.pdf_estimate([1.0, 2.0], bins=1)


class TestSpectrum:
    def test_sine_peak(self):
        dt, n = 0.05, 2000
        t = np.arange(n) * dt
        s = M.power_spectrum(np.sin(2 * np.pi * 0.462 * t) + 0.3, dt=dt)
        assert abs(s.f_max - 0.462) <= 1.0 / (n * dt)

    def test_constant(self):
        s = M.power_spectrum(np.full(64, 2.5), dt=0.1)
        assert s.power[0] > 0 and np.all(s.power[1:] == 0) and s.f_max == 0.0

    def test_two_sines_amplitude_ratio(self):
        dt, n = 0.1, 1000
        t = np.arange(n) * dt
        # both frequencies fall exactly on bins (k/(n dt))
        f1, f2, a1, a2 = 0.5, 1.2, 2.0, 0.5
        s = M.power_spectrum(a1 * np.sin(2 * np.pi * f1 * t) + a2 * np.sin(2 * np.pi * f2 * t), dt=dt)
        p1 = s.power[np.argmin(abs(s.freqs - f1))]
        p2 = s.power[np.argmin(abs(s.freqs - f2))]
        assert p1 / p2 == pytest.approx((a1 / a2) ** 2, rel=1e-9)
        assert s.f_max == pytest.approx(f1)

    def test_timestamps(self):
        t = np.linspace(0, 10, 101)
        s = M.power_spectrum(np.sin(t), times=t)
        assert s.freqs[1] == pytest.approx(1 / (101 * 0.1))
        bad = t.copy()
        bad[50] += 0.03
        with pytest.raises(ValueError):
            M.power_spectrum(np.sin(bad), times=bad)
        with pytest.raises(ValueError):
            M.power_spectrum(np.ones(10))


class TestMOR:
    def test_exactly_linear(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(300, 4))
        y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + 0.7
        r = M.mor_baseline(X, {"vx": y})
        assert r.stats["vx"].r2 == pytest.approx(1.0, abs=1e-12) and not r.rank_deficient

    def test_noise(self):
        rng = np.random.default_rng(1)
        X, Xt = rng.normal(size=(5000, 4)), rng.normal(size=(5000, 4))
        r = M.mor_baseline(X, {"vx": rng.normal(size=5000)}, Xt, {"vx": rng.normal(size=5000)})
        assert abs(r.stats["vx"].r2) < 0.01

    def test_rank_deficiency_flagged(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 1))
        r = M.mor_baseline(np.hstack([x, 2 * x]), {"vz": x[:, 0]})
        assert r.rank_deficient and r.rank == 2
        assert r.stats["vz"].r2 == pytest.approx(1.0)


def test_stats_csv_layout():
    s = {"T": M.field_stats([0.1, 1.1, 1.9, 3.0], [0, 1, 2, 3]), "p": M.field_stats([1, 2, 3], [1, 2, 4], "pressure")}
    lines = M.stats_csv(s, M.aggregate(s)).splitlines()
    assert lines[0] == "field,RMSE,MAE,mu_err_pct,sigma_err_pct,R_corr,R2"
    assert lines[2].split(",")[3] == "n/a" and lines[3].startswith("aggregate,")
