import time

import numpy as np
import pytest

from rbpinn import autodiff as ad
from rbpinn.network import Architecture, forward, xavier_init

H = 1e-5


def bind(x=None, **params):
    inputs = {} if x is None else {"x": np.atleast_1d(np.asarray(x, dtype=float))}
    return ad.Bindings(inputs, {k: np.atleast_2d(v) for k, v in params.items()})


def scalar(e, b):
    return float(ad.evaluate(e, b).reshape(-1)[0])


class TestHandExamples:
    def test_polynomial(self):
        x = ad.input_var("x")
        e = ad.powi(x, 3)
        assert scalar(e, bind(2.0)) == 8.0
        assert scalar(ad.d_input(e, x, 1), bind(2.0)) == 12.0
        assert scalar(ad.d_input(e, x, 2), bind(2.0)) == 12.0

    def test_tanh_at_origin(self):
        x = ad.input_var("x")
        e = ad.tanh(x)
        assert scalar(e, bind(0.0)) == 0.0
        assert scalar(ad.d_input(e, "x", 1), bind(0.0)) == 1.0
        assert scalar(ad.d_input(e, "x", 2), bind(0.0)) == 0.0

    def test_weighted_square_and_mixed_gradient(self):
        x, w = ad.input_var("x"), ad.param("w", (1, 1))
        e = ad.mul(w, ad.square(x))
        b = bind(2.0, w=3.0)
        assert scalar(e, b) == 12.0
        dx = ad.d_input(e, x)
        assert scalar(dx, b) == 12.0
        g = ad.grad_params(ad.mean(dx), b)
        assert g["w"].item() == pytest.approx(4.0, abs=0)

    def test_half_theta_squared(self):
        t = ad.param("theta", (1, 1))
        g = ad.grad_params(ad.scale(ad.square(t), 0.5), bind(theta=1.0))
        assert g["theta"].item() == 1.0

    def test_least_squares_gradient(self):
        x, w = ad.input_var("x"), ad.param("w", (1, 1))
        loss = ad.mean(ad.square(ad.sub(ad.mul(w, x), ad.const(1.0))))
        assert ad.grad_params(loss, bind(1.0, w=2.0))["w"].item() == 2.0

    def test_derivative_path_gradient(self):
        x, w = ad.input_var("x"), ad.param("w", (1, 1))
        s = ad.mean(ad.square(ad.d_input(ad.mul(w, ad.tanh(x)), x)))
        b = bind(0.0, w=2.0)
        assert scalar(s, b) == 4.0
        assert ad.grad_params(s, b)["w"].item() == 4.0


class TestErrors:
    def test_unbound_input(self):
        with pytest.raises(ad.BindingError):
            ad.evaluate(ad.input_var("x"), ad.Bindings({}, {}))

    def test_unbound_param(self):
        with pytest.raises(ad.BindingError):
            ad.evaluate(ad.param("w", (1, 1)), ad.Bindings({}, {}))

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.evaluate(ad.param("w", (2, 2)), bind(w=np.ones((3, 3))))
        with pytest.raises(ad.ShapeError):
            ad.evaluate(ad.input_var("v", 2), ad.Bindings({"v": np.ones(4)}, {}))

    def test_non_scalar_gradient(self):
        with pytest.raises(ad.ShapeError):
            ad.grad_params(ad.input_var("x"), bind([1.0, 2.0]))

    def test_non_smooth_node(self):
        x = ad.input_var("x")
        with pytest.raises(ad.DifferentiabilityError):
            ad.d_input(ad.absolute(x), x)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            ad.d_input(ad.input_var("x"), "x", 3)


class TestGraphProperties:
    def test_hash_consing_shares_nodes(self):
        x = ad.input_var("x")
        assert ad.tanh(x) is ad.tanh(ad.input_var("x"))
        a = ad.d_input(ad.tanh(x), x)
        assert ad.d_input(ad.tanh(x), x) is a

    def test_topological_order(self):
        x = ad.input_var("x")
        e = ad.add(ad.tanh(x), ad.powi(ad.tanh(x), 2))
        order = ad.topological([e])
        pos = {id(n): i for i, n in enumerate(order)}
        for n in order:
            for a in n.args:
                assert pos[id(a)] < pos[id(n)]

    def test_free_variables_survive_differentiation(self):
        x, w = ad.input_var("x"), ad.param("w", (1, 1))
        e = ad.mul(w, ad.sin(x))
        assert ad.free_params(ad.d_input(e, x)) == ["w"]
        assert ad.free_inputs(ad.d_input(e, x)) == ["x"]

    def test_referential_transparency(self, rng):
        arch = Architecture((3, 8, 8, 2))
        ins = [ad.input_var(n) for n in "xzt"]
        e = ad.d_input(forward(arch, ins), "z", 2)
        b = ad.Bindings({n: rng.uniform(size=50) for n in "xzt"}, xavier_init(arch, 1).as_dict())
        assert np.array_equal(ad.evaluate(e, b), ad.evaluate(e, b))

    def test_iterated_first_derivative_equals_second(self, rng):
        arch = Architecture((3, 10, 10, 3))
        ins = [ad.input_var(n) for n in "xzt"]
        out = forward(arch, ins, [(0, 1), (0, 1), (0, 2)])
        b = ad.Bindings({n: rng.uniform(size=40) for n in "xzt"}, xavier_init(arch, 2).as_dict())
        for v in "xzt":
            a = ad.evaluate(ad.d_input(ad.d_input(out, v), v), b)
            c = ad.evaluate(ad.d_input(out, v, 2), b)
            np.testing.assert_allclose(a, c, rtol=1e-13, atol=1e-15)


def _rel(a, b):
    return np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300)


def test_finite_difference_oracle_on_reference_network():
    """Input derivatives (orders 1, 2) and parameter gradients through them vs central differences."""
    t0 = time.perf_counter()
    arch = Architecture((3, 20, 20, 5))
    names = ("x", "z", "t")
    ins = [ad.input_var(n) for n in names]
    ranges = [(0.0, 1.0), (0.0, 1.0), (0.0, 2.0)]
    net = forward(arch, ins, ranges)
    cases, worst = 0, 0.0
    for trial in range(40):
        rng = np.random.default_rng(trial)
        params = xavier_init(arch, trial).as_dict()
        pts = {n: rng.uniform(lo, hi, size=8) for n, (lo, hi) in zip(names, ranges)}
        b = ad.Bindings(pts, params)
        j = int(rng.integers(5))
        var = names[int(rng.integers(3))]
        f = ad.col(net, j)
        d1, d2 = ad.d_input(f, var, 1), ad.d_input(f, var, 2)

        def shifted(h, expr):
            q = dict(pts)
            q[var] = pts[var] + h
            return ad.evaluate(expr, ad.Bindings(q, params))

        fd1 = (shifted(H, f) - shifted(-H, f)) / (2 * H)
        fd2 = (shifted(H, d1) - shifted(-H, d1)) / (2 * H)
        for got, ref in ((ad.evaluate(d1, b), fd1), (ad.evaluate(d2, b), fd2)):
            worst = max(worst, _rel(got, ref))
            cases += 1

        # gradient of a residual-like scalar with respect to one random entry of each layer
        s = ad.add(ad.mean(ad.square(d2)), ad.mean(ad.mul(d1, f)))
        g = ad.grad_params(s, b)
        for name in ("W1", "b2", "W3"):
            k = tuple(int(rng.integers(n)) for n in params[name].shape)
            hp = 1e-6

            def at(delta):
                p = {kk: v.copy() for kk, v in params.items()}
                p[name][k] += delta
                return float(ad.evaluate(s, ad.Bindings(pts, p))[0, 0])

            fd = (at(hp) - at(-hp)) / (2 * hp)
            err = abs(g[name][k] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
            cases += 1
    assert cases >= 100
    assert worst < 1e-6, worst
    assert time.perf_counter() - t0 < 60
