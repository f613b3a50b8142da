import numpy as np
import pytest

from tacshape import autodiff as ad
from tacshape.errors import NotScalarError, ShapeMismatchError


def f64(x, grad=True):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestForward:
    def test_matmul_ones(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((3, 1)))
        out = ad.matmul(a, b)
        assert np.allclose(out.data, 3.0)

    def test_relu(self):
        out = ad.relu(ad.constant(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_clamp_saturates(self):
        delta = 0.3
        out = ad.clamp(ad.constant(np.array([2 * delta])), -delta, delta)
        assert np.isclose(out.data[0], delta)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    def test_concat_last_axis(self):
        out = ad.concat([ad.constant(np.ones((2, 2))), ad.constant(np.zeros((2, 3)))], axis=1)
        assert out.shape == (2, 5)


class TestBackward:
    def test_square_gradient(self):
        x = f64([3.0])
        y = ad.mul(x, x)
        ad.backward(ad.mean_all(y))
        assert np.isclose(x.grad[0], 6.0)

    def test_l1_subgradient(self):
        x = f64([2.0, -1.0, 0.0])
        loss = ad.l1_loss(x, ad.constant(np.zeros(3), dtype=np.float64))
        ad.backward(loss)
        assert np.allclose(x.grad, [1 / 3, -1 / 3, 0.0])  # sign(0) = 0

    def test_requires_scalar(self):
        x = f64(np.ones(3))
        with pytest.raises(NotScalarError):
            ad.backward(ad.mul(x, x))

    def test_unreached_param_zero(self):
        x = f64([1.0])
        unused = f64([5.0])
        ad.backward(ad.sumsq(x), params=[x, unused])
        assert np.array_equal(unused.grad, np.zeros(1))

    def test_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        w1 = f64(rng.normal(size=(4, 8)))
        b1 = f64(np.zeros(8))
        w2 = f64(rng.normal(size=(8, 8)) * 0.5)
        b2 = f64(np.zeros(8))
        w3 = f64(rng.normal(size=(8, 1)))
        x = ad.constant(rng.normal(size=(6, 4)), dtype=np.float64)
        t = ad.constant(rng.normal(size=(6, 1)), dtype=np.float64)

        def loss():
            h = ad.relu(ad.linear(x, w1, b1))
            h = ad.tanh(ad.linear(h, w2, b2))
            return ad.l1_loss(ad.matmul(h, w3), t)

        err = ad.check_gradients(loss, [w1, b1, w2, b2, w3], h=1e-5)
        assert err < 1e-4

    def test_gradient_linearity(self):
        rng = np.random.default_rng(1)
        x = f64(rng.normal(size=5))

        def f():
            return ad.sumsq(x)

        def g():
            return ad.mean_all(ad.mul(x, ad.mul(x, x)))

        a, b = 1.7, -0.6
        x.grad = None
        ad.backward(ad.add(ad.scale(f(), a), ad.scale(g(), b)))
        combined = x.grad.copy()
        x.grad = None
        ad.backward(f())
        gf = x.grad.copy()
        x.grad = None
        ad.backward(g())
        gg = x.grad.copy()
        assert np.abs(combined - (a * gf + b * gg)).max() < 1e-12

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(2)
        w = ad.Tensor(rng.normal(size=(5, 5)).astype(np.float32), requires_grad=True)
        x = ad.constant(rng.normal(size=(3, 5)).astype(np.float32))

        def run():
            w.grad = None
            loss = ad.sumsq(ad.relu(ad.matmul(x, w)))
            ad.backward(loss)
            return loss.data.copy(), w.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert np.array_equal(l1, l2) and np.array_equal(g1, g2)


PRIMITIVES = {
    "matmul": lambda x: ad.matmul(x, ad.constant(np.full((4, 2), 0.7), dtype=np.float64)),
    "add": lambda x: ad.add(x, ad.constant(np.linspace(0, 1, 4), dtype=np.float64)),
    "sub": lambda x: ad.sub(x, ad.constant(np.linspace(-1, 1, 4), dtype=np.float64)),
    "mul": lambda x: ad.mul(x, ad.constant(np.linspace(0.5, 2, 4), dtype=np.float64)),
    "scale": lambda x: ad.scale(x, -1.3),
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sin": ad.sin,
    "cos": ad.cos,
    "clamp": lambda x: ad.clamp(x, -0.4, 0.4),
    "concat": lambda x: ad.concat([x, ad.constant(np.ones((3, 4)), dtype=np.float64)], axis=1),
    "reshape": lambda x: ad.reshape(x, (4, 3)),
    "take_rows": lambda x: ad.take_rows(x, np.array([0, 2, 2, 1])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_vjp_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = f64(rng.normal(size=(3, 4)) * 0.5)
    op = PRIMITIVES[name]

    def loss():
        return ad.sumsq(op(x))

    err = ad.check_gradients(loss, [x], h=1e-5)
    assert err < 1e-5, f"{name}: {err}"


@pytest.mark.parametrize("name", ["l1_loss", "mean_all", "sumsq"])
def test_reduction_vjp_finite_differences(name):
    rng = np.random.default_rng(3)
    x = f64(rng.normal(size=(3, 4)))
    target = ad.constant(rng.normal(size=(3, 4)), dtype=np.float64)
    ops = {
        "l1_loss": lambda: ad.l1_loss(x, target),
        "mean_all": lambda: ad.mean_all(x),
        "sumsq": lambda: ad.sumsq(x),
    }
    err = ad.check_gradients(ops[name], [x], h=1e-5)
    assert err < 1e-6


class TestCheckGradients:
    def test_smooth_graph_tight(self):
        rng = np.random.default_rng(4)
        x = f64(rng.normal(size=6))

        def loss():
            return ad.mean_all(ad.mul(ad.sin(x), ad.cos(x)))

        assert ad.check_gradients(loss, [x], h=1e-5) < 1e-6

    def test_clamp_flat_region(self):
        x = f64(np.full(4, 3.0))  # deep in the flat region

        def loss():
            return ad.sumsq(ad.clamp(x, -1.0, 1.0))

        ad.backward(loss(), params=[x])
        assert np.array_equal(x.grad, np.zeros(4))
        assert ad.check_gradients(loss, [x], h=1e-5) < 1e-10

    def test_detects_corrupted_vjp(self):
        x = f64(np.array([0.7, -0.3, 1.2]))

        def bad_square(t):
            # deliberately wrong backward rule (factor 3 instead of 2)
            return ad._node(t.data * t.data, (t,), lambda g: (3.0 * g * t.data,))

        def loss():
            return ad.mean_all(bad_square(x))

        assert ad.check_gradients(loss, [x], h=1e-5) > 1e-2


class TestAdam:
    def test_zero_gradient_no_change(self):
        w = ad.Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        before = w.data.copy()
        w.grad = np.zeros(2, dtype=np.float32)
        opt = ad.Adam([([w], 0.1)])
        opt.step()
        assert np.array_equal(w.data, before)

    def test_first_step_is_signed_lr(self):
        w = ad.Tensor(np.zeros(3, dtype=np.float64), requires_grad=True, dtype=np.float64)
        g = np.array([0.5, -2.0, 1e-3])
        w.grad = g
        opt = ad.Adam([([w], 0.01)])
        opt.step()
        # bias-corrected first step: -lr * g / (|g| + eps) ~ -lr * sign(g)
        assert np.allclose(w.data, -0.01 * np.sign(g), atol=1e-5)

    def test_converges_on_quadratic(self):
        target = np.array([1.0, -2.0, 0.5, 3.0])
        w = ad.Tensor(np.zeros(4), requires_grad=True)
        c = ad.constant(target.astype(np.float32))
        opt = ad.Adam([([w], 0.05)])
        for _ in range(200):
            opt.zero_grad()
            ad.backward(ad.sumsq(ad.sub(w, c)))
            opt.step()
        assert np.abs(w.data - target).max() < 1e-3

    def test_functional_adam_step_shape_check(self):
        state = ad.AdamState.for_param(np.zeros(3))
        with pytest.raises(ShapeMismatchError):
            ad.adam_step(np.zeros(3), np.zeros(4), state)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(5)
        tensors = {
            "layer.w": rng.normal(size=(4, 7)).astype(np.float32),
            "layer.b": rng.normal(size=7).astype(np.float32),
            "scalar": np.float32(rng.normal(size=())),
        }
        p = tmp_path / "m.tprm"
        ad.save_tensors(p, tensors)
        back = ad.load_tensors(p)
        assert set(back) == set(tensors)
        for k in tensors:
            assert np.array_equal(np.asarray(tensors[k]), back[k])

    def test_file_deterministic(self, tmp_path):
        t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
        ad.save_tensors(tmp_path / "a.tprm", t)
        ad.save_tensors(tmp_path / "b.tprm", t)
        assert (tmp_path / "a.tprm").read_bytes() == (tmp_path / "b.tprm").read_bytes()
