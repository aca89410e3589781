import numpy as np
import pytest

from spectralign import AdamState, MlpField, NumericalError, adam_step, mlp_backward, mlp_forward


def flatten(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def fd_param_gradient(net, X, upstream, pi, flat_index, h=1e-6):
    params = [p.copy() for p in net.parameters()]

    def value(sign):
        trial = [p.copy() for p in params]
        trial[pi].ravel()[flat_index] += sign * h
        n2 = MlpField(
            weights=[trial[2 * i] for i in range(len(net.weights))],
            biases=[trial[2 * i + 1] for i in range(len(net.weights))],
            activation=net.activation,
        )
        return float(np.sum(upstream * mlp_forward(n2, X)))

    return (value(+1) - value(-1)) / (2 * h)


class TestForward:
    def test_zero_final_layer_outputs_zero(self, rng):
        net = MlpField.create([5, 32, 32, 3], rng)
        X = rng.standard_normal((11, 5))
        assert np.array_equal(mlp_forward(net, X), np.zeros((11, 3)))

    def test_single_linear_layer(self):
        net = MlpField(weights=[np.array([[2.0]])], biases=[np.array([3.0])])
        assert np.allclose(mlp_forward(net, np.array([[1.0]])), [[5.0]])

    def test_matches_scalar_reimplementation(self, rng):
        from scipy.special import erf

        net = MlpField.create([3, 8, 8, 2], rng, zero_last=False)
        X = rng.standard_normal((5, 3))
        out = mlp_forward(net, X)

        def gelu_scalar(x):
            return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))

        for r in range(5):
            a = list(X[r])
            for li, (w, b) in enumerate(zip(net.weights, net.biases)):
                z = [sum(a[i] * w[i, j] for i in range(w.shape[0])) + b[j]
                     for j in range(w.shape[1])]
                a = z if li == len(net.weights) - 1 else [gelu_scalar(v) for v in z]
            assert np.abs(np.array(a) - out[r]).max() < 1e-12

    def test_dimension_mismatch(self, rng):
        net = MlpField.create([4, 8, 2], rng)
        with pytest.raises(ValueError):
            mlp_forward(net, rng.standard_normal((3, 5)))

    def test_lipschitz_on_bounded_inputs(self, rng):
        # smooth activation with bounded slope: |f(x)-f(y)| <= L |x-y|
        net = MlpField.create([4, 16, 16, 2], rng, zero_last=False)
        gelu_slope = 1.2  # max |gelu'| is about 1.13
        L = gelu_slope ** 2
        for w in net.weights:
            L *= np.linalg.norm(w, 2)
        X = rng.uniform(-2, 2, size=(40, 4))
        Y = rng.uniform(-2, 2, size=(40, 4))
        fx, fy = mlp_forward(net, X), mlp_forward(net, Y)
        ratio = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(X - Y, axis=1)
        assert ratio.max() <= L


class TestBackward:
    def test_matches_finite_differences(self, rng):
        net = MlpField.create([4, 10, 10, 3], rng, zero_last=False)
        X = rng.standard_normal((7, 4))
        upstream = rng.standard_normal((7, 3))
        grads, _ = mlp_backward(net, X, upstream)
        for pi, g in enumerate(grads):
            flat = g.ravel()
            picks = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            for k in picks:
                fd = fd_param_gradient(net, X, upstream, pi, k)
                denom = max(abs(fd), abs(flat[k]), 1e-8)
                assert abs(fd - flat[k]) / denom < 1e-4

    def test_input_gradient_matches_fd(self, rng):
        net = MlpField.create([3, 12, 2], rng, zero_last=False)
        X = rng.standard_normal((4, 3))
        upstream = rng.standard_normal((4, 2))
        _, dX = mlp_backward(net, X, upstream)
        h = 1e-6
        for i in range(4):
            for j in range(3):
                Xp, Xm = X.copy(), X.copy()
                Xp[i, j] += h
                Xm[i, j] -= h
                fd = (np.sum(upstream * mlp_forward(net, Xp))
                      - np.sum(upstream * mlp_forward(net, Xm))) / (2 * h)
                assert abs(fd - dX[i, j]) / max(abs(fd), 1e-8) < 1e-4

    def test_zero_upstream(self, rng):
        net = MlpField.create([3, 8, 2], rng, zero_last=False)
        grads, dX = mlp_backward(net, rng.standard_normal((5, 3)), np.zeros((5, 2)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)
        assert np.array_equal(dX, np.zeros((5, 3)))

    def test_linear_layer_closed_form(self, rng):
        net = MlpField(weights=[rng.standard_normal((3, 2))], biases=[np.zeros(2)])
        X = rng.standard_normal((6, 3))
        upstream = rng.standard_normal((6, 2))
        grads, _ = mlp_backward(net, X, upstream)
        assert np.abs(grads[0] - X.T @ upstream).max() < 1e-12
        assert np.abs(grads[1] - upstream.sum(axis=0)).max() < 1e-12


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState.for_params(p, lr=0.1)
        out = adam_step(state, p, [np.zeros(2)])
        assert np.array_equal(out[0], p[0])

    def test_first_step_magnitude_is_lr(self):
        p = [np.zeros(4)]
        state = AdamState.for_params(p, lr=0.01)
        out = adam_step(state, p, [np.full(4, 0.73)])
        # bias correction makes mhat/sqrt(vhat) = sign(g) on step one
        assert np.allclose(out[0], -0.01, atol=1e-6)

    def test_quadratic_bowl_convergence(self):
        p = [np.array([1.0])]
        state = AdamState.for_params(p, lr=1e-2)
        for _ in range(500):
            p = adam_step(state, p, [2.0 * p[0]])
        assert abs(p[0][0]) < 1e-3

    def test_non_finite_gradient_named(self):
        p = [np.zeros(2), np.zeros(3)]
        state = AdamState.for_params(p)
        bad = [np.zeros(2), np.array([1.0, np.nan, 0.0])]
        with pytest.raises(NumericalError, match="tensor 1"):
            adam_step(state, p, bad)

    def test_step_counter(self):
        p = [np.zeros(1)]
        state = AdamState.for_params(p)
        for expected in (1, 2, 3):
            p = adam_step(state, p, [np.ones(1)])
            assert state.step == expected


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        net = MlpField.create([6, 32, 32, 4], rng, zero_last=False)
        path = str(tmp_path / "net.mlp")
        net.save(path)
        loaded = MlpField.load(path)
        assert loaded.widths == net.widths
        assert loaded.activation == net.activation
        X = rng.standard_normal((5, 6))
        assert np.array_equal(mlp_forward(loaded, X), mlp_forward(net, X))
