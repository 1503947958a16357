import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mmgf.errors import CapacityError, ConvergenceError, InputError
from mmgf.graphs import build_interaction_graph, knn_graph, modality_graph_from_knn
from mmgf.spectral import (DegenerateSpectrumWarning, FilterSpec, SpectralBounds, apply_filter,
                           apply_linear_lpf, apply_polynomial_filter, extreme_eigenvalues,
                           filter_response, response_table, smoothness, spectrum_histogram)

P_TOY = np.array([[0.75, np.sqrt(0.125)], [np.sqrt(0.125), 0.5]])
BABY = FilterSpec.polynomial(-0.7, 1.1, -0.1)


def random_symmetric(rng, n, lo=-2.0, hi=80.0):
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(lo, hi, n)
    P = (Qm * w) @ Qm.T
    return 0.5 * (P + P.T)


def oracle_filter(P, spec):
    """U diag(h(mu - lmin)) U^T with h evaluated on the shifted eigenvalues."""
    w, U = np.linalg.eigh(P)
    lmin, lstar = w[0], w[-1] - w[0]
    x = w - lmin
    h = sum(a * x ** k / lstar ** (k - 1) for k, a in enumerate(spec.coefficients, start=1))
    return (U * h) @ U.T, h


class TestExtremeEigenvalues:
    def test_identity(self):
        b = extreme_eigenvalues(np.eye(4))
        assert (b.lambda_min, b.lambda_max, b.lambda_star) == (1.0, 1.0, 0.0)

    def test_toy(self):
        b = extreme_eigenvalues(P_TOY)
        assert abs(b.lambda_min - 0.25) < 1e-9 and abs(b.lambda_max - 1.0) < 1e-9
        assert abs(b.lambda_star - 0.75) < 1e-9

    def test_diagonal(self):
        b = extreme_eigenvalues(np.diag([-1.0, 14.0]))
        np.testing.assert_allclose([b.lambda_min, b.lambda_max, b.lambda_star], [-1, 14, 15])

    def test_asymmetric_rejected(self):
        with pytest.raises(InputError):
            extreme_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_lambda_star_exact(self):
        b = extreme_eigenvalues(P_TOY)
        assert b.lambda_star == b.lambda_max - b.lambda_min

    @pytest.mark.parametrize("method", ["lanczos", "power"])
    def test_iterative_identity(self, method):
        b = extreme_eigenvalues(np.eye(50), dense_threshold=0, method=method)
        assert b.method == "iterative"
        assert abs(b.lambda_min - 1) < 1e-12 and abs(b.lambda_max - 1) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 200), st.floats(-5, 0), st.floats(0.1, 80))
    def test_iterative_matches_dense(self, seed, n, lo, span):
        rng = np.random.default_rng(seed)
        P = random_symmetric(rng, n, lo, lo + span)
        d = extreme_eigenvalues(P)
        it = extreme_eigenvalues(P, dense_threshold=0)
        assert it.method == "iterative" and d.method == "dense"
        for a, b in ((it.lambda_min, d.lambda_min), (it.lambda_max, d.lambda_max)):
            assert abs(a - b) <= 1e-6 * max(1.0, abs(b))
        assert it.residual <= np.sqrt(1e-7) * max(1.0, abs(d.lambda_min), abs(d.lambda_max))

    def test_power_method_matches_on_separated_spectrum(self):
        P = np.diag(np.linspace(-1, 14, 60)) + 0.0
        b = extreme_eigenvalues(P, dense_threshold=0, method="power")
        assert abs(b.lambda_min + 1) < 1e-6 and abs(b.lambda_max - 14) < 1e-6

    def test_non_convergence_carries_residual(self):
        rng = np.random.default_rng(0)
        P = random_symmetric(rng, 80)
        with pytest.raises(ConvergenceError) as exc:
            extreme_eigenvalues(P, tol=1e-14, max_iter=3, dense_threshold=0)
        assert exc.value.residual > 0 and exc.value.iterations == 3

    def test_unknown_method(self):
        with pytest.raises(InputError):
            extreme_eigenvalues(np.eye(3), dense_threshold=0, method="qr")

    @pytest.mark.parametrize("alpha,s", [(0.5, 1.0), (0.7, 0.6)])
    def test_knn_graph_clustered_spectrum(self, alpha, s):
        # modality graphs have tightly clustered low eigenvalues
        X = np.random.default_rng(11).standard_normal((1500, 16))
        g = modality_graph_from_knn(knn_graph(X, 20), alpha, s, "txt", dense=False)
        w = np.linalg.eigvalsh(g.adjacency.toarray())
        b = extreme_eigenvalues(g, dense_threshold=0)
        assert abs(b.lambda_min - w[0]) <= 1e-6 * max(1, abs(w[0]))
        assert abs(b.lambda_max - w[-1]) <= 1e-6 * max(1, abs(w[-1]))

    def test_deterministic(self):
        P = random_symmetric(np.random.default_rng(5), 120)
        a = extreme_eigenvalues(P, dense_threshold=0)
        b = extreme_eigenvalues(P, dense_threshold=0)
        assert a == b


class TestFilterSpec:
    def test_linear_equivalence(self):
        assert FilterSpec.linear().coefficients == (1.0,)
        assert str(FilterSpec.linear()) == "linear"

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            FilterSpec.polynomial()

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            FilterSpec("chebyshev", (1.0,))


class TestPolynomialFilter:
    def test_linear_toy(self):
        f = apply_polynomial_filter(P_TOY, extreme_eigenvalues(P_TOY), FilterSpec.polynomial(1.0))
        np.testing.assert_allclose(f.adjacency, [[0.5, 0.35355], [0.35355, 0.25]], atol=1e-5)

    def test_linear_lpf_bitwise_equal_to_k1(self):
        P = random_symmetric(np.random.default_rng(2), 30)
        b = extreme_eigenvalues(P)
        a = apply_linear_lpf(P, b).adjacency
        c = apply_polynomial_filter(P, b, FilterSpec.polynomial(1.0)).adjacency
        assert np.array_equal(a, c)

    def test_identity_degenerate(self):
        with pytest.warns(DegenerateSpectrumWarning):
            f = apply_polynomial_filter(np.eye(3), extreme_eigenvalues(np.eye(3)), BABY)
        assert f.degenerate and np.all(f.adjacency == 0)

    def test_linear_lpf_identity_no_error(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            f = apply_linear_lpf(np.eye(3), extreme_eigenvalues(np.eye(3)))
        np.testing.assert_array_equal(f.adjacency, np.zeros((3, 3)))

    def test_rejects_linear_kind(self):
        with pytest.raises(InputError):
            apply_polynomial_filter(P_TOY, extreme_eigenvalues(P_TOY), FilterSpec.linear())

    def test_baby_coefficients_spectral_calculus(self):
        P = random_symmetric(np.random.default_rng(3), 60)
        f = apply_polynomial_filter(P, extreme_eigenvalues(P), BABY)
        expect, h = oracle_filter(P, BABY)
        got = np.linalg.eigvalsh(f.adjacency)
        np.testing.assert_allclose(np.sort(got), np.sort(h), rtol=1e-6, atol=1e-9 * np.abs(h).max())
        assert np.linalg.norm(f.adjacency - expect) <= 1e-6 * np.linalg.norm(expect)

    def test_symmetric(self):
        P = random_symmetric(np.random.default_rng(4), 50)
        H = apply_polynomial_filter(P, extreme_eigenvalues(P), FilterSpec.polynomial(0.3, -1.2, 2.0, 0.7)).adjacency
        assert np.abs(H - H.T).max() <= 1e-10

    def test_linear_lpf_spectrum_shift(self):
        P = random_symmetric(np.random.default_rng(6), 40)
        f = apply_linear_lpf(P, extreme_eigenvalues(P))
        w = np.linalg.eigvalsh(f.adjacency)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(P) - np.linalg.eigvalsh(P)[0], atol=1e-8)
        assert abs(w[0]) <= 1e-8

    def test_shift_preserves_eigenvectors(self):
        P = random_symmetric(np.random.default_rng(7), 30)
        lmin = np.linalg.eigvalsh(P)[0]
        _, U = np.linalg.eigh(P)
        Q = P - lmin * np.eye(30)
        D = U.T @ Q @ U
        assert np.linalg.norm(D - np.diag(np.diag(D))) <= 1e-10 * np.linalg.norm(D)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 100),
           st.lists(st.floats(-2, 2), min_size=1, max_size=4))
    def test_spectral_calculus_property(self, seed, n, coeffs):
        P = random_symmetric(np.random.default_rng(seed), n)
        spec = FilterSpec.polynomial(*coeffs)
        f = apply_polynomial_filter(P, extreme_eigenvalues(P), spec)
        expect, _ = oracle_filter(P, spec)
        scale = max(np.linalg.norm(expect), 1e-12 * np.linalg.norm(P))
        assert np.linalg.norm(f.adjacency - expect) <= 1e-6 * scale

    @pytest.mark.parametrize("spec", [BABY, FilterSpec.linear(), FilterSpec.polynomial(0.7, 1.8, 1.5)])
    def test_lazy_operator_matches_materialized(self, spec):
        R = sp.random(60, 25, density=0.2, random_state=np.random.default_rng(8), format="csr")
        R.data[:] = 1
        R = R + sp.csr_matrix((np.ones(25), (np.arange(25) % 60, np.arange(25))), shape=(60, 25))
        R.data[:] = 1
        g = build_interaction_graph(R, 0.6, 0.9, dense=False, allow_isolated=True)
        b = extreme_eigenvalues(g)
        dense = apply_filter(g, b, spec)
        lazy = apply_filter(g, b, spec, materialize=False)
        assert not lazy.materialized
        Y = R[:10]
        np.testing.assert_allclose(lazy.right_multiply(Y), dense.right_multiply(Y), rtol=1e-9, atol=1e-12)

    def test_dense_cap(self):
        with pytest.raises(CapacityError):
            apply_polynomial_filter(P_TOY, extreme_eigenvalues(P_TOY), BABY, dense_cap=1)


class TestResponse:
    bounds = SpectralBounds(0.25, 1.0)

    def test_zero_at_span(self):
        assert filter_response(BABY, self.bounds, 0.75) == 0.0

    def test_linear_at_zero(self):
        assert filter_response(FilterSpec.linear(), self.bounds, 0.0) == pytest.approx(0.75)

    def test_quadratic_value(self):
        assert filter_response(FilterSpec.polynomial(0, 1), self.bounds, 0.375) == pytest.approx(0.1875)

    @pytest.mark.parametrize("lam", [-0.01, 0.76])
    def test_outside_domain(self, lam):
        with pytest.raises(InputError):
            filter_response(BABY, self.bounds, lam)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("lstar", [0.75, 1.0, 15.0, 82.0])
    def test_monomial_bounded_and_decreasing(self, k, lstar):
        coeffs = [0.0] * (k - 1) + [1.0]
        lam = np.linspace(0, lstar, 1000)
        h = filter_response(FilterSpec.polynomial(*coeffs), SpectralBounds(0.0, lstar), lam)
        assert np.all(h >= 0) and np.all(h <= lstar * (1 + 1e-12))
        assert np.all(np.diff(h) <= 0)

    def test_table(self):
        text = response_table(BABY, self.bounds, samples=3)
        assert text.splitlines()[0] == "lambda\tresponse"
        assert len(text.splitlines()) == 4


class TestHistogram:
    def test_identity(self):
        h = spectrum_histogram(np.eye(4), 2)
        assert h.counts.sum() == 4 and h.counts[-1] == 4

    def test_toy(self):
        h = spectrum_histogram(P_TOY, 2)
        np.testing.assert_array_equal(h.counts, [1, 1])
        assert h.lambda_min == pytest.approx(0.25) and h.lambda_max == pytest.approx(1.0)

    def test_interaction_graph_unit_support(self):
        rng = np.random.default_rng(9)
        R = sp.csr_matrix((rng.random((80, 40)) < 0.1).astype(float) + np.eye(80, 40))
        h = spectrum_histogram(build_interaction_graph(R, 0.5, 1.0), 10)
        assert h.lambda_min >= -1e-10 and h.lambda_max <= 1 + 1e-10

    def test_capacity(self):
        with pytest.raises(CapacityError, match="subsample"):
            spectrum_histogram(np.eye(5), 2, max_items=4)

    def test_tsv_footer(self):
        lines = spectrum_histogram(P_TOY, 2).to_tsv().splitlines()
        assert lines[-2].startswith("#lambda_min\t") and lines[-1].startswith("#lambda_max\t")


class TestSmoothness:
    def test_constant(self):
        A = np.random.default_rng(0).random((5, 5))
        assert smoothness(np.ones(5), A + A.T) == pytest.approx(0.0, abs=1e-12)

    def test_hand(self):
        assert smoothness([1.0, 0.0], np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(2.0)

    def test_zero_graph(self):
        assert smoothness([3.0, -1.0, 2.0], np.zeros((3, 3))) == 0.0

    def test_matches_double_sum(self):
        rng = np.random.default_rng(1)
        A = rng.random((6, 6))
        A = A + A.T
        x = rng.standard_normal(6)
        brute = sum(A[i, j] * (x[i] - x[j]) ** 2 for i in range(6) for j in range(6))
        assert smoothness(x, A) == pytest.approx(brute, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            smoothness([1.0, 2.0, 3.0], np.eye(2))
