import numpy as np
import pytest

from spectralign import chamfer, nearest_neighbors


def brute_force_chamfer(P, Q):
    D = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)
    return D.min(1).mean() + D.min(0).mean()


def brute_force_gradients(P, Q):
    D = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)
    apq = D.argmin(1)
    aqp = D.argmin(0)
    n, m = len(P), len(Q)
    dP = (2.0 / n) * (P - Q[apq])
    dQ = (2.0 / m) * (Q - P[aqp])
    for j, i in enumerate(aqp):
        dP[i] -= (2.0 / m) * (Q[j] - P[i])
    for i, j in enumerate(apq):
        dQ[j] -= (2.0 / n) * (P[i] - Q[j])
    return dP, dQ


class TestNearestNeighbors:
    def test_matches_brute_force(self, rng):
        A = rng.standard_normal((100, 3))
        B = rng.standard_normal((80, 3))
        idx, dist = nearest_neighbors(A, B)
        D = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        assert np.array_equal(idx, D.argmin(1))
        assert np.abs(dist - np.sqrt(D.min(1))).max() < 1e-12

    def test_kdtree_path_matches_blocked_path(self, rng):
        import spectralign.distances as ch

        A = rng.standard_normal((300, 3))
        B = rng.standard_normal((200, 3))
        idx0, d0 = nearest_neighbors(A, B)
        old = ch._BLOCK_ENTRIES
        ch._BLOCK_ENTRIES = 10  # force the kd-tree branch
        try:
            idx1, d1 = nearest_neighbors(A, B)
        finally:
            ch._BLOCK_ENTRIES = old
        assert np.array_equal(idx0, idx1)
        assert np.abs(d0 - d1).max() < 1e-12

    def test_tie_break_lowest_index(self):
        # indices 1, 2, 3 are all at distance 0.5; the lowest must win
        q = np.array([[0.5, 0.0]])
        pts = np.array([[3.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        idx, _ = nearest_neighbors(q, pts)
        assert idx[0] == 1

    def test_tie_break_lowest_index_kdtree(self):
        import spectralign.distances as ch

        q = np.tile([[0.5, 0.0]], (5, 1))
        pts = np.array([[3.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        old = ch._BLOCK_ENTRIES
        ch._BLOCK_ENTRIES = 1
        try:
            idx, _ = nearest_neighbors(q, pts)
        finally:
            ch._BLOCK_ENTRIES = old
        assert (idx == 1).all()

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((0, 3)), np.zeros((4, 3)))
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((4, 3)), np.zeros((0, 3)))


class TestChamfer:
    def test_coincident_clouds(self, rng):
        P = rng.standard_normal((30, 3))
        value, dP, dQ = chamfer(P, P.copy())
        assert value == 0.0
        assert np.array_equal(dP, np.zeros_like(P))
        assert np.array_equal(dQ, np.zeros_like(P))

    def test_two_points_1d(self):
        # CD = 1 + 1 = 2; each point feels both directed terms, which a
        # central difference on the full value confirms
        value, dP, dQ = chamfer(np.array([[0.0]]), np.array([[1.0]]))
        assert value == pytest.approx(2.0)
        h = 1e-7
        fd = (chamfer(np.array([[h]]), np.array([[1.0]]))[0]
              - chamfer(np.array([[-h]]), np.array([[1.0]]))[0]) / (2 * h)
        assert dP[0, 0] == pytest.approx(fd, rel=1e-6)
        assert dP[0, 0] == pytest.approx(-4.0)
        assert dQ[0, 0] == pytest.approx(4.0)

    def test_matches_brute_force_oracle(self, rng):
        P = rng.standard_normal((50, 3))
        Q = rng.standard_normal((70, 3))
        value, dP, dQ = chamfer(P, Q)
        assert abs(value - brute_force_chamfer(P, Q)) < 1e-10
        bf_dP, bf_dQ = brute_force_gradients(P, Q)
        assert np.abs(dP - bf_dP).max() < 1e-10
        assert np.abs(dQ - bf_dQ).max() < 1e-10

    def test_high_dimension(self, rng):
        P = rng.standard_normal((40, 63))
        Q = rng.standard_normal((50, 63))
        value, _, _ = chamfer(P, Q)
        assert abs(value - brute_force_chamfer(P, Q)) < 1e-10

    def test_symmetry(self, rng):
        P = rng.standard_normal((25, 4))
        Q = rng.standard_normal((35, 4))
        assert chamfer(P, Q)[0] == pytest.approx(chamfer(Q, P)[0], rel=1e-12)

    def test_row_permutation_invariance(self, rng):
        P = rng.standard_normal((25, 3))
        Q = rng.standard_normal((35, 3))
        value = chamfer(P, Q)[0]
        perm = rng.permutation(25)
        assert chamfer(P[perm], Q)[0] == pytest.approx(value, rel=1e-12)

    def test_zero_iff_equal_as_sets(self, rng):
        P = rng.integers(0, 4, size=(20, 3)).astype(float)
        perm = rng.permutation(20)
        assert chamfer(P, P[perm])[0] == 0.0
        Q = P.copy()
        Q[0] += 10.0
        assert chamfer(P, Q)[0] > 0.0

    def test_nonnegative(self, rng):
        for _ in range(10):
            P = rng.standard_normal((15, 2))
            Q = rng.standard_normal((9, 2))
            assert chamfer(P, Q)[0] >= 0.0

    def test_gradient_matches_fd_random(self, rng):
        P = rng.standard_normal((12, 3))
        Q = rng.standard_normal((15, 3))
        _, dP, dQ = chamfer(P, Q)
        h = 1e-6
        for arr, grad, which in ((P, dP, 0), (Q, dQ, 1)):
            for _ in range(10):
                i = rng.integers(len(arr))
                j = rng.integers(arr.shape[1])
                plus, minus = arr.copy(), arr.copy()
                plus[i, j] += h
                minus[i, j] -= h
                args_p = (plus, Q) if which == 0 else (P, plus)
                args_m = (minus, Q) if which == 0 else (P, minus)
                fd = (chamfer(*args_p)[0] - chamfer(*args_m)[0]) / (2 * h)
                assert abs(fd - grad[i, j]) < 1e-5 * max(1.0, abs(fd))
