import numpy as np
import pytest

from wsseg.model import (DivergenceError, ModelParameters, SGDMomentum, backward,
                         encode_points, forward, init_params, load_checkpoint, save_checkpoint,
                         sgd_momentum_step, softmax, softmax_backward)

from .oracles import central_difference


def mlp_oracle(params, x):
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        rows = []
        for r in h:
            out = [sum(r[j] * w[j, c] for j in range(w.shape[0])) + b[c] for c in range(w.shape[1])]
            rows.append(out)
        h = np.array(rows)
        if i < len(params.weights) - 1:
            h = np.where(h > 0, h, 0.0)
    return h


class TestEncode:
    def test_collinear(self):
        pts = np.array([[0, 0, 0], [1, 1, 0], [2, 2, 0]], dtype=float)
        f = encode_points(pts, None, 3)
        np.testing.assert_allclose(f.linearity, 1, atol=1e-9)
        np.testing.assert_allclose(f.planarity, 0, atol=1e-9)
        np.testing.assert_allclose(f.sphericity, 0, atol=1e-9)

    def test_horizontal_plane(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(0, 5, 400), rng.uniform(0, 5, 400), np.full(400, 2.0)])
        f = encode_points(pts, None, 16)
        assert np.median(f.planarity) > 0.5
        np.testing.assert_allclose(f.sphericity, 0, atol=1e-9)
        np.testing.assert_allclose(f.verticality, 0, atol=1e-9)
        np.testing.assert_allclose(f.height, 0)

    def test_vertical_line_is_vertical(self):
        pts = np.column_stack([np.zeros(20), np.zeros(20), np.arange(20.0)])
        f = encode_points(pts, None, 5)
        np.testing.assert_allclose(f.linearity, 1, atol=1e-9)
        np.testing.assert_allclose(f.verticality, 1, atol=1e-9)

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(0, 1, size=(60, 3)) * [2.0, 1.0, 0.5]
        k = 10
        f = encode_points(pts, None, k)
        for i in range(60):
            nn = np.argsort(np.linalg.norm(pts - pts[i], axis=1), kind="stable")[:k]
            cov = np.cov(pts[nn].T, bias=True)
            vals, vecs = np.linalg.eigh(cov)
            l3, l2, l1 = vals
            assert f.linearity[i] == pytest.approx((l1 - l2) / l1, abs=1e-8)
            assert f.planarity[i] == pytest.approx((l2 - l3) / l1, abs=1e-8)
            assert f.sphericity[i] == pytest.approx(l3 / l1, abs=1e-8)
            assert f.verticality[i] == pytest.approx(1 - abs(vecs[2, 0]), abs=1e-8)

    def test_bounded_and_finite(self):
        pts = np.random.default_rng(2).uniform(0, 10, size=(200, 3))
        f = encode_points(pts, np.ones((200, 2)), 8)
        m = f.matrix()
        assert np.all(np.isfinite(m)) and m.shape == (200, 8)
        for v in (f.linearity, f.planarity, f.sphericity, f.verticality):
            assert np.all((v >= 0) & (v <= 1 + 1e-12))

    def test_small_batch_padded(self):
        f = encode_points(np.array([[0, 0, 0], [1, 0, 0]], dtype=float), None, 5)
        assert len(f) == 2 and np.all(np.isfinite(f.matrix()))

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            encode_points(np.zeros((5, 3)), None, 2)


class TestForward:
    def test_zero_params_zero_logits(self):
        p = init_params(5, 3, np.random.default_rng(0))
        for a in p.blocks:
            a[...] = 0
        out = forward(p, np.random.default_rng(1).normal(size=(4, 5)))
        np.testing.assert_array_equal(out.logits, 0)

    def test_duplicate_rows(self):
        p = init_params(5, 3, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 5))
        x[2] = x[0]
        lg = forward(p, x).logits
        np.testing.assert_array_equal(lg[2], lg[0])

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        p = init_params(6, 4, rng, hidden=(7, 5))
        for b in p.biases:
            b[...] = rng.normal(size=b.shape)
        x = rng.normal(size=(5, 6))
        np.testing.assert_allclose(forward(p, x).logits, mlp_oracle(p, x), atol=1e-10)

    def test_width_mismatch(self):
        p = init_params(5, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward(p, np.zeros((2, 4)))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        p = init_params(5, 3, rng)
        x = rng.normal(size=(10, 5))
        perm = rng.permutation(10)
        np.testing.assert_allclose(forward(p, x[perm]).logits, forward(p, x).logits[perm])


class TestSoftmax:
    def test_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros((2, 5))), 0.2)

    def test_overflow(self):
        p = softmax(np.array([[1000.0, 0.0]]))
        np.testing.assert_allclose(p, [[1.0, 0.0]])
        assert np.all(np.isfinite(p))

    def test_values(self):
        e = np.exp([1.0, 2.0, 3.0])
        expected = e / e.sum()
        np.testing.assert_allclose(expected, [0.09003, 0.24473, 0.66524], atol=1e-5)
        np.testing.assert_allclose(softmax(np.array([[1.0, 2.0, 3.0]]))[0], expected, atol=1e-12)

    def test_rows_sum_to_one(self):
        p = softmax(np.random.default_rng(0).normal(0, 10, size=(50, 7)))
        np.testing.assert_allclose(p.sum(1), 1, atol=1e-9)
        assert np.all(p > 0)


class TestBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(0)
        p = init_params(4, 3, rng)
        out = forward(p, rng.normal(size=(6, 4)))
        for g in backward(out, np.zeros((6, 3))).blocks:
            np.testing.assert_array_equal(g, 0)

    def test_single_linear_layer(self):
        rng = np.random.default_rng(1)
        p = init_params(4, 3, rng, hidden=())
        x = rng.normal(size=(1, 4))
        g = rng.normal(size=(1, 3))
        grads = backward(forward(p, x), g)
        np.testing.assert_allclose(grads.weights[0], np.outer(x[0], g[0]))
        np.testing.assert_allclose(grads.biases[0], g[0])

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = init_params(5, 3, rng, hidden=(8, 6))
        for b in p.biases:
            b[...] = rng.normal(0, 0.1, size=b.shape)
        x = rng.normal(size=(7, 5))
        g = rng.normal(size=(7, 3))
        analytic = backward(forward(p, x), g)

        def f():
            return float(np.sum(forward(p, x).logits * g))

        for blk, ga in zip(p.blocks, analytic.blocks):
            num = central_difference(f, blk, 1e-5)
            np.testing.assert_allclose(ga, num, rtol=1e-4, atol=1e-7)

    def test_softmax_backward_matches_fd(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(4, 5))
        gp = rng.normal(size=(4, 5))
        analytic = softmax_backward(softmax(z), gp)
        num = central_difference(lambda: float(np.sum(softmax(z) * gp)), z, 1e-6)
        np.testing.assert_allclose(analytic, num, atol=1e-8)


class TestSGD:
    def _params(self):
        return init_params(3, 2, np.random.default_rng(0), hidden=(4,))

    def test_zero_gradient_noop(self):
        p = self._params()
        before = [a.copy() for a in p.blocks]
        opt = SGDMomentum(p)
        zeros = ModelParameters.from_blocks([np.zeros_like(a) for a in p.blocks])
        opt.step(p, zeros)
        for a, b in zip(p.blocks, before):
            np.testing.assert_array_equal(a, b)

    def test_first_step(self):
        p = self._params()
        before = [a.copy() for a in p.blocks]
        g = ModelParameters.from_blocks([np.full_like(a, 0.5) for a in p.blocks])
        SGDMomentum(p, lr=1e-2, momentum=0.98).step(p, g)
        for a, b in zip(p.blocks, before):
            np.testing.assert_allclose(a, b - 1e-2 * 0.5)

    @pytest.mark.parametrize("t", [1, 5, 50])
    def test_velocity_geometric_series(self, t):
        p = self._params()
        opt = SGDMomentum(p, lr=1e-3, momentum=0.98)
        g = ModelParameters.from_blocks([np.full_like(a, 0.3) for a in p.blocks])
        for _ in range(t):
            opt.step(p, g)
        expected = 0.3 * (1 - 0.98 ** t) / (1 - 0.98)
        for v in opt.velocity:
            np.testing.assert_allclose(v, expected, rtol=1e-12)

    def test_nonfinite_rejected(self):
        p = self._params()
        before = [a.copy() for a in p.blocks]
        g = ModelParameters.from_blocks([np.zeros_like(a) for a in p.blocks])
        g.biases[-1][0] = np.inf
        with pytest.raises(DivergenceError):
            sgd_momentum_step(p, g, 1e-2, 0.9, [np.zeros_like(a) for a in p.blocks])
        for a, b in zip(p.blocks, before):
            np.testing.assert_array_equal(a, b)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_params(7, 4, np.random.default_rng(0))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, p, {"k_neighbors": 9})
        q, meta = load_checkpoint(path)
        assert meta == {"k_neighbors": 9}
        for a, b in zip(p.blocks, q.blocks):
            np.testing.assert_array_equal(a, b)

    def test_layout(self, tmp_path):
        p = init_params(2, 2, np.random.default_rng(0), hidden=())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, p)
        data = path.read_bytes()
        assert data[:8] == b"WSSEGCKP"
        tail = np.frombuffer(data[-16:], dtype="<f8")
        np.testing.assert_array_equal(tail, p.biases[0])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(20))
        with pytest.raises(ValueError):
            load_checkpoint(path)
