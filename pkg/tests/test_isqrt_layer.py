import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isqrt_cov import cov_pool
from isqrt_cov.isqrt_layer import (
    DegenerateInput,
    DivergenceError,
    MetaLayerConfig,
    Mode,
    backward,
    backward_c,
    backward_ns,
    backward_post,
    backward_pre,
    forward,
    forward_inference,
    ns_forward,
    post_compensate,
    pre_normalize,
    sym_from_vec,
    triu_vec,
    vec_adjoint,
    vec_size,
)
from isqrt_cov.matrix_core import is_symmetric, jacobi_eig, symmetrize
from isqrt_cov.oracle_check import compare_gradients, exact_sqrt, finite_diff_grad, scalar_ns

from conftest import random_spd, random_sym, rel

MODES = [Mode.TRACE, Mode.FROBENIUS]


def test_config_validation():
    assert MetaLayerConfig().mode is Mode.TRACE and MetaLayerConfig().iterations == 5
    assert MetaLayerConfig(mode="frobenius").mode is Mode.FROBENIUS
    with pytest.raises(ValueError):
        MetaLayerConfig(iterations=0)
    with pytest.raises(ValueError):
        MetaLayerConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        MetaLayerConfig(mode="log")


class TestPreNormalize:
    def test_trace_identity(self):
        a, s = pre_normalize(np.eye(5), Mode.TRACE)
        assert s == 5
        np.testing.assert_allclose(a, np.eye(5) / 5)

    def test_frobenius_scaled_identity(self):
        a, s = pre_normalize(4 * np.eye(2), Mode.FROBENIUS)
        assert s == pytest.approx(math.sqrt(32))
        np.testing.assert_allclose(a, np.eye(2) / math.sqrt(2))

    @pytest.mark.parametrize("mode", MODES)
    def test_convergence_condition(self, rng, mode):
        for _ in range(5):
            a, _ = pre_normalize(random_spd(rng, 8), mode)
            lam = jacobi_eig(a).eigenvalues
            assert np.max(np.abs(lam - 1.0)) < 1.0
            # smallest eigenvalue is the last one; ||A - I||_2 = 1 - lambda_min / s
            assert np.max(np.abs(lam - 1.0)) == pytest.approx(1.0 - lam[-1], abs=1e-12)

    def test_zero_covariance(self):
        with pytest.raises(DegenerateInput):
            pre_normalize(np.zeros((3, 3)))
        with pytest.raises(DegenerateInput):
            forward(cov_pool.covariance_forward(np.ones((4, 3))))


class TestNewtonSchulz:
    def test_identity_fixed_point(self):
        tape = ns_forward(np.eye(4), 6)
        for y, z in zip(tape.ys, tape.zs):
            np.testing.assert_array_equal(y, np.eye(4))
            np.testing.assert_array_equal(z, np.eye(4))

    def test_quarter_identity_one_step(self):
        tape = ns_forward(0.25 * np.eye(3), 1)
        np.testing.assert_allclose(tape.ys[1], 11 / 32 * np.eye(3), rtol=0, atol=1e-16)
        np.testing.assert_allclose(tape.zs[1], 11 / 8 * np.eye(3), rtol=0, atol=1e-16)

    def test_tape_shape(self, rng):
        a, _ = pre_normalize(random_spd(rng, 6))
        tape = ns_forward(a, 4)
        assert len(tape.ys) == len(tape.zs) == 5
        assert tape.iterations == 4 and tape.stored_matrices() == 10
        np.testing.assert_array_equal(tape.ys[0], a)
        np.testing.assert_array_equal(tape.zs[0], np.eye(6))
        assert all(is_symmetric(m) for m in tape.ys + tape.zs)

    def test_close_to_exact_root(self, rng):
        # Frobenius pre-normalization of a well-conditioned matrix
        a, _ = pre_normalize(random_spd(rng, 16, cond=4), Mode.FROBENIUS)
        root = exact_sqrt(a)
        tape = ns_forward(a, 5)
        assert rel(tape.y, root) <= 1e-3
        defects = [np.linalg.norm(y @ z - np.eye(16)) for y, z in zip(tape.ys, tape.zs)]
        assert all(b < a_ for a_, b in zip(defects, defects[1:]))

    def test_coupled_inverse_nonincreasing(self, rng):
        for mode in MODES:
            a, _ = pre_normalize(random_spd(rng, 10), mode)
            tape = ns_forward(a, 12)
            d = [np.linalg.norm(z @ y - np.eye(10)) for y, z in zip(tape.ys, tape.zs)]
            assert all(b <= a_ + 1e-10 for a_, b in zip(d, d[1:]))

    def test_divergence_reports_step(self):
        with pytest.raises(DivergenceError) as info:
            ns_forward(10.0 * np.eye(2), 40)
        assert 1 <= info.value.iteration <= 40

    @given(st.floats(0.01, 1.99), st.integers(1, 8), st.integers(1, 5))
    def test_diagonal_matches_scalar(self, a, n, d):
        y, z = scalar_ns(a, n)
        tape = ns_forward(a * np.eye(d), n)
        np.testing.assert_allclose(np.diag(tape.y), y, rtol=1e-14)
        np.testing.assert_allclose(np.diag(tape.zs[-1]), z, rtol=1e-14)


class TestPostCompensate:
    def test_scalar_root(self):
        for n in (1, 5):
            out, _ = forward(np.array([[9.0]]), MetaLayerConfig(iterations=n))
            assert out.c[0, 0] == pytest.approx(3.0, abs=1e-12)

    def test_identity_follows_scalar_recurrence(self):
        out, _ = forward(np.eye(4), MetaLayerConfig(iterations=5))
        y5, _ = scalar_ns(0.25, 5)
        np.testing.assert_array_equal(out.c, 2.0 * y5 * np.eye(4))

    def test_vector_length(self):
        assert vec_size(256) == 32896
        tape = ns_forward(np.eye(256) / 256, 1)
        assert post_compensate(tape).vec.shape == (32896,)

    def test_vec_is_row_major_upper_triangle(self, rng):
        out, _ = forward(random_spd(rng, 4))
        c = out.c
        expected = [c[i, j] for i in range(4) for j in range(i, 4)]
        np.testing.assert_array_equal(out.vec, expected)


class TestForward:
    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("n", range(1, 11))
    def test_scalar_exact(self, mode, n):
        out, _ = forward(np.array([[2.5]]), MetaLayerConfig(mode=mode, iterations=n))
        assert out.c[0, 0] == pytest.approx(math.sqrt(2.5), abs=1e-12)

    def test_isotropic_commutes_with_rotation(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        sigma = 3.0 * np.eye(5)
        c1 = forward(q @ sigma @ q.T)[0].c
        c0 = forward(sigma)[0].c
        np.testing.assert_allclose(c1, q @ c0 @ q.T, atol=1e-12)

    def test_approximately_squares_back(self, rng):
        # Calibrated against the eigen oracle: trace mode at N=5 leaves ~1.7e-2 at d=8.
        for _ in range(10):
            sigma = random_spd(rng, 8)
            c = forward(sigma, MetaLayerConfig(iterations=5))[0].c
            assert rel(c @ c, sigma) <= 2e-2

    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("c", [0.1, 1.0, 10.0])
    def test_scale_equivariance(self, rng, mode, c):
        sigma = random_spd(rng, 6)
        cfg = MetaLayerConfig(mode=mode)
        lhs = forward(c * c * sigma, cfg)[0].c
        rhs = c * forward(sigma, cfg)[0].c
        assert rel(lhs, rhs) <= 1e-10

    @pytest.mark.parametrize("mode", MODES)
    def test_inference_matches_training_forward(self, rng, mode):
        sigma = random_spd(rng, 7)
        cfg = MetaLayerConfig(mode=mode, iterations=4)
        np.testing.assert_array_equal(forward_inference(sigma, cfg).c, forward(sigma, cfg)[0].c)

    @pytest.mark.parametrize("mode", MODES)
    def test_residual_nonincreasing(self, rng, mode):
        for _ in range(8):
            sigma = random_spd(rng, 8, cond=100)
            norm = np.linalg.norm(sigma)
            _, tape = forward(sigma, MetaLayerConfig(mode=mode, iterations=14))
            r = [np.linalg.norm(tape.normalizer * y @ y - sigma) for y in tape.ys[1:]]
            for a, b in zip(r, r[1:]):
                assert b <= a or b <= 1e-10 * norm

    def test_quadratic_convergence(self, rng):
        # c <= 10 on small well-conditioned inputs; in general r' <= r^2 / lambda_min
        for d, cond in [(4, 10), (8, 100), (16, 100)]:
            worst = 0.0
            for _ in range(5):
                sigma = random_spd(rng, d, cond=cond)
                norm = np.linalg.norm(sigma)
                lam_min = jacobi_eig(sigma).eigenvalues[-1]
                _, tape = forward(sigma, MetaLayerConfig(iterations=16))
                r = [np.linalg.norm(tape.normalizer * y @ y - sigma) for y in tape.ys[1:]]
                for a, b in zip(r, r[1:]):
                    if b > 1e-10 * norm:
                        assert b <= a * a / lam_min * (1 + 1e-6)
                        worst = max(worst, b / (a * a / norm))
            if (d, cond) == (4, 10):
                assert worst <= 10

    def test_convergence_check_flag(self):
        indefinite = np.diag([1.0, -0.9])
        with pytest.raises(ValueError, match="would not converge"):
            forward(indefinite, MetaLayerConfig(check_convergence=True))
        forward(np.diag([1.0, 0.5]), MetaLayerConfig(check_convergence=True))


class TestVectorization:
    @given(st.integers(1, 7), st.integers(0, 2 ** 31))
    def test_adjoint_preserves_inner_product(self, d, seed):
        rng = np.random.default_rng(seed)
        dvec = rng.standard_normal(vec_size(d))
        delta = random_sym(rng, d)
        lhs = float(np.sum(vec_adjoint(dvec, d) * delta))
        rhs = float(dvec @ triu_vec(delta))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_round_trip(self, rng):
        sigma = random_sym(rng, 5)
        np.testing.assert_array_equal(sym_from_vec(triu_vec(sigma)), sigma)

    def test_bad_length(self, rng):
        _, tape = forward(random_spd(rng, 3))
        with pytest.raises(ValueError):
            backward(tape, np.ones(5))


class TestBackwardStages:
    def test_zero_upstream(self, rng):
        sigma = random_spd(rng, 4)
        for mode in MODES:
            _, tape = forward(sigma, MetaLayerConfig(mode=mode))
            d_y, d_post = backward_post(tape, np.zeros((4, 4)))
            np.testing.assert_array_equal(d_y, 0)
            np.testing.assert_array_equal(d_post, 0)
            np.testing.assert_array_equal(backward_pre(sigma, np.zeros((4, 4)), np.zeros((4, 4)), mode), 0)
            np.testing.assert_array_equal(backward(tape, np.zeros(10)), 0)

    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("n", range(1, 11))
    def test_scalar_chain(self, mode, n):
        sigma, g = 2.5, -1.75
        _, tape = forward(np.array([[sigma]]), MetaLayerConfig(mode=mode, iterations=n))
        d_sigma = backward_c(tape, np.array([[g]]))
        assert d_sigma[0, 0] == pytest.approx(g / (2 * math.sqrt(sigma)), abs=1e-12)

    def test_single_iteration_is_terminal_step(self, rng):
        a, _ = pre_normalize(random_spd(rng, 5))
        tape = ns_forward(a, 1)
        g = random_sym(rng, 5)
        expected = 0.5 * (g @ (3 * np.eye(5) - a) - a @ g)
        np.testing.assert_allclose(backward_ns(tape, g), symmetrize(expected), atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 5, 9])
    def test_identity_recursion(self, rng, n):
        # At A = I every iterate is I, so dY_{k-1} = (dY_k - dZ_k)/2 and
        # dZ_{k-1} = (dZ_k - dY_k)/2; starting from dZ_N = 0 this gives dA = dY_N / 2.
        g = random_sym(rng, 4)
        dy, dz = g, np.zeros((4, 4))
        for _ in range(n - 1):
            dy, dz = 0.5 * (dy - dz), 0.5 * (dz - dy)
        expected = 0.5 * (dy - dz)
        np.testing.assert_allclose(expected, 0.5 * g, atol=1e-15)
        np.testing.assert_allclose(backward_ns(ns_forward(np.eye(4), n), g), expected, atol=1e-15)

    def test_inconsistent_tape(self, rng):
        _, tape = forward(random_spd(rng, 3))
        tape.zs.pop()
        with pytest.raises(ValueError):
            backward_ns(tape, np.eye(3))

    def test_ns_map_finite_differences(self, rng):
        a, _ = pre_normalize(random_spd(rng, 8))
        g = random_sym(rng, 8)
        tape = ns_forward(a, 5)
        analytic = backward_ns(tape, g)

        def loss(ap):
            return float(np.sum(g * ns_forward(symmetrize(ap), 5).y))

        numeric = finite_diff_grad(loss, a, 1e-5 * np.linalg.norm(a), order=4)
        assert compare_gradients(analytic, numeric, 1e-6)["passed"]

    @pytest.mark.parametrize("mode", MODES)
    def test_gradients_symmetric(self, rng, mode):
        sigma = random_spd(rng, 6)
        _, tape = forward(sigma, MetaLayerConfig(mode=mode))
        d_y, d_post = backward_post(tape, random_sym(rng, 6))
        assert is_symmetric(d_y) and is_symmetric(d_post)
        d_a = backward_ns(tape, d_y)
        assert is_symmetric(d_a)
        assert is_symmetric(backward_pre(sigma, d_a, d_post, mode))


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("n_iter", [1, 3, 5])
def test_vec_probe_end_to_end(rng, mode, n_iter):
    x = rng.uniform(size=(16, 8))
    probe = rng.standard_normal(vec_size(8))
    cfg = MetaLayerConfig(mode=mode, iterations=n_iter)
    sigma = cov_pool.covariance_forward(x)
    _, tape = forward(sigma, cfg)
    analytic = cov_pool.covariance_backward(x, backward(tape, probe))

    def loss(xp):
        return float(probe @ forward(cov_pool.covariance_forward(xp), cfg)[0].vec)

    numeric = finite_diff_grad(loss, x, order=4)
    report = compare_gradients(analytic, numeric, 1e-6)
    assert report["passed"], report
