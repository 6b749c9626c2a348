import math

import numpy as np
import pytest

from rbpinn.dataset import load_db, save_db
from rbpinn.errors import ConfigError, NumericAbort
from rbpinn.refsolver import (Diagnostics, ManufacturedSolution, Solver, SolverConfig, manufactured_db,
                              solve_boussinesq_2d, taylor_green_run)


class TestTaylorGreen:
    def test_energy_decay_rate_at_64(self):
        nu = 0.01
        t, e, _, diag = taylor_green_run(64, nu, 0.5)
        rate = -np.polyfit(t, np.log(e), 1)[0]
        assert abs(rate / (16 * math.pi**2 * nu) - 1) < 0.01
        assert diag.max_divergence < 1e-10

    def test_second_order_convergence(self):
        errs = [taylor_green_run(n, 0.01, 0.5)[2] for n in (16, 32, 64)]
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        assert all(3.5 < r < 4.5 for r in ratios), ratios


@pytest.fixture(scope="module")
def run():
    d = Diagnostics()
    cfg = SolverConfig(nx=32, nz=32, dt=5e-3, spinup=5.0, n_snapshots=20, snapshot_dt=0.1)
    return cfg, solve_boussinesq_2d(cfg, d), d


class TestRayleighBenard:
    def test_snapshots_and_bounds(self, run):
        cfg, db, d = run
        assert db.fields["T"].shape == (20, 32, 32)
        np.testing.assert_allclose(np.diff(db.times), 0.1, rtol=1e-9)
        T = db.fields["T"]
        assert T.min() >= 0.0 and T.max() <= 1.0
        assert T[:, 16, 8].std() > 1e-3
        assert d.max_divergence < 1e-10 and d.steps > 0

    def test_format_invariants(self, run, tmp_path):
        _, db, _ = run
        db.validate()
        save_db(db, tmp_path / "rb.snap")
        back = load_db(tmp_path / "rb.snap")
        assert np.array_equal(back.fields["T"], db.fields["T"]) and back.provenance == db.provenance

    def test_deterministic(self):
        cfg = SolverConfig(nx=16, nz=16, dt=1e-2, spinup=0.5, n_snapshots=3, snapshot_dt=0.1, seed=4)
        a, b = solve_boussinesq_2d(cfg), solve_boussinesq_2d(cfg)
        assert all(np.array_equal(a.fields[k], b.fields[k]) for k in a.fields)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(Ra=0.0), dict(Pr=-1.0), dict(nx=2), dict(bc_z="slip"),
                                    dict(initial="random"), dict(dt=0.1, snapshot_dt=0.25), dict(n_snapshots=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SolverConfig(**kw)

    def test_stability_check(self):
        with pytest.raises(ConfigError, match="advection"):
            Solver(SolverConfig(nx=64, nz=64, dt=0.01, snapshot_dt=0.1))
        with pytest.raises(ConfigError, match="diffusion"):
            Solver(SolverConfig(nx=64, nz=64, Ra=1.0, Pr=1.0, dt=1e-3, snapshot_dt=0.1))
        Solver(SolverConfig())

    def test_non_finite_state_aborts(self):
        s = Solver(SolverConfig(nx=8, nz=8, dt=1e-3, snapshot_dt=1e-3))
        st = s.initial_state()
        st.T[3, 3] = np.nan
        with pytest.raises(NumericAbort) as exc:
            s.step(st)
        assert exc.value.iteration == 1


class TestManufactured:
    def test_divergence_free_samples(self):
        ms = ManufacturedSolution()
        db = manufactured_db(ms, (41, 41), [0.0, 0.7])
        h = 1.0 / 40
        vx, vz = db.fields["vx"], db.fields["vz"]
        div = (vx[:, 2:, 1:-1] - vx[:, :-2, 1:-1]) / (2 * h) + (vz[:, 1:-1, 2:] - vz[:, 1:-1, :-2]) / (2 * h)
        # central differences of a smooth field: truncation error only
        assert np.abs(div).max() < 1e-2
        x = np.random.default_rng(0).uniform(size=(3, 500))
        d = 1e-6
        ddx = (ms.field("vx", x[0] + d, x[1], x[2]) - ms.field("vx", x[0] - d, x[1], x[2])) / (2 * d)
        ddz = (ms.field("vz", x[0], x[1] + d, x[2]) - ms.field("vz", x[0], x[1] - d, x[2])) / (2 * d)
        assert np.abs(ddx + ddz).max() < 1e-8

    def test_temperature_in_unit_interval(self):
        db = manufactured_db(ManufacturedSolution(), (33, 33), np.linspace(0, 6, 13))
        assert db.fields["T"].min() >= 0.0 and db.fields["T"].max() <= 1.0
        db.validate()

    def test_provenance_round_trip(self):
        ms = ManufacturedSolution(params={"A": 0.5, "P": 2.0})
        back = ManufacturedSolution.from_provenance(ms.provenance())
        x = np.linspace(0.1, 0.9, 7)
        for f in ms.field_names:
            np.testing.assert_array_equal(back.field(f, x, x, x), ms.field(f, x, x, x))
