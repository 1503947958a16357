"""Spectral bounds, shift-normalized polynomial filters and spectrum diagnostics.

For a graph ``P`` with extreme eigenvalues ``lmin <= lmax`` and span
``lstar = lmax - lmin`` the filter is

    P_f = sum_k  a_k / lstar**(k-1) * (P - lmin I)**k

whose frequency response on the Laplacian ``lmax I - P`` is
``h(l) = sum_k a_k (lstar - l)**k / lstar**(k-1)`` for ``l`` in ``[0, lstar]``.
Every monomial maps ``[0, lstar]`` monotonically onto ``[0, lstar]``.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from . import matrix as mx
from .errors import CapacityError, ConvergenceError, InputError
from .graphs import ItemGraph

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 5000
# largest n solved by full eigendecomposition inside extreme_eigenvalues
DEFAULT_DENSE_THRESHOLD = 1024
# largest n accepted by spectrum_histogram
HISTOGRAM_MAX_ITEMS = 8192
DEGENERATE_EPS = 1e-9
# dense graphs sparser than this are iterated through a CSR copy
SPARSE_MATVEC_DENSITY = 0.25
SYMMETRY_ATOL = 1e-10
_START_SEED = 0x5EED
_START_JITTER = 1e-2


class DegenerateSpectrumWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min: float
    lambda_max: float
    method: str = "dense"
    residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if self.lambda_min > self.lambda_max:
            raise InputError(f"lambda_min {self.lambda_min} exceeds lambda_max {self.lambda_max}")

    @property
    def lambda_star(self) -> float:
        return self.lambda_max - self.lambda_min


@dataclass(frozen=True)
class FilterSpec:
    """Polynomial coefficients ``a_1..a_K`` or the linear low-pass filter."""

    kind: str = "polynomial"
    coefficients: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.kind not in ("polynomial", "linear_lpf"):
            raise InputError(f"unknown filter kind {self.kind!r}")
        coeffs = tuple(float(a) for a in self.coefficients)
        if self.kind == "linear_lpf":
            coeffs = (1.0,)
        if not coeffs:
            raise InputError("polynomial filter needs at least one coefficient")
        if not all(np.isfinite(coeffs)):
            raise InputError(f"non-finite filter coefficients {coeffs}")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def polynomial(cls, *coefficients: float) -> "FilterSpec":
        return cls("polynomial", tuple(coefficients))

    @classmethod
    def linear(cls) -> "FilterSpec":
        return cls("linear_lpf")

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def scaled_coefficients(self, lambda_star: float) -> np.ndarray:
        k = np.arange(self.order)
        return np.asarray(self.coefficients) / lambda_star ** k

    def __str__(self):
        if self.kind == "linear_lpf":
            return "linear"
        return ",".join(f"{a:g}" for a in self.coefficients)


def _adjacency(P):
    if isinstance(P, ItemGraph):
        return P.adjacency
    if sp.issparse(P):
        return mx.canonical(P)
    return np.asarray(P, dtype=np.float64)


# --------------------------------------------------------------------------
# extreme eigenvalues
# --------------------------------------------------------------------------

def _start_vector(n: int) -> np.ndarray:
    v = np.ones(n) + _START_JITTER * np.random.default_rng(_START_SEED).standard_normal(n)
    return v / np.linalg.norm(v)


def _gershgorin_lower(A) -> float:
    if sp.issparse(A):
        diag = A.diagonal()
        off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    else:
        diag = np.diag(A)
        off = np.abs(A).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - off))


def _power(A, sign: float, shift: float, v: np.ndarray, tol: float, max_iter: int, label: str):
    """Power iteration on ``sign * A + shift * I`` (assumed positive semidefinite).

    Returns the Rayleigh quotient of ``A``, the residual norm
    ``|A v - theta v|`` and the iteration count.
    """
    r = np.inf
    for it in range(1, max_iter + 1):
        w = A @ v
        theta = float(v @ w)
        r = float(np.linalg.norm(w - theta * v))
        if r <= tol * max(1.0, abs(theta)):
            return theta, r, it
        u = sign * w + shift * v
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return theta, r, it
        v = u / nrm
    raise ConvergenceError(
        f"power iteration for {label} did not converge in {max_iter} iterations "
        f"(residual {r:.3e})", residual=r, iterations=max_iter)


def _settled(theta: float, r: float, prev: float, tol: float) -> bool:
    """Ritz value accepted: residual below ``tol``, or stagnated with residual below sqrt(tol).

    The second rule covers extremes inside a tight eigenvalue cluster, where
    the residual decays far slower than the Ritz value itself (the error is
    of order ``r**2 / gap``).
    """
    scale = max(1.0, abs(theta))
    if r <= tol * scale:
        return True
    return r <= np.sqrt(tol) * scale and abs(theta - prev) <= 0.01 * tol * scale


def _lanczos(A, v: np.ndarray, tol: float, max_iter: int, check_every: int = 10):
    """Extreme Ritz values of ``A`` by Lanczos with full reorthogonalization.

    Returns ``(theta_min, theta_max, residual, steps)`` where the residual is
    the larger of the two Ritz-pair residual norms ``|beta_m * s_m|``.
    Ritz values approach the extremes from inside the spectrum.
    """
    n = A.shape[0]
    m_max = min(max_iter, n)
    Q = np.empty((min(m_max, 64) + 1, n))
    Q[0] = v / np.linalg.norm(v)
    diag: list[float] = []
    off: list[float] = []
    res = np.inf
    prev = (np.nan, np.nan)
    for j in range(m_max):
        w = A @ Q[j]
        a = float(Q[j] @ w)
        w -= a * Q[j]
        if j:
            w -= off[-1] * Q[j - 1]
        for _ in range(2):
            w -= Q[:j + 1].T @ (Q[:j + 1] @ w)
        b = float(np.linalg.norm(w))
        diag.append(a)
        scale = max(1.0, abs(a), *(abs(x) for x in off[-1:]))
        breakdown = b <= 1e-12 * scale
        if breakdown or j + 1 == m_max or (j + 1) % check_every == 0:
            d = np.asarray(diag)
            e = np.asarray(off)
            if d.size == 1:
                lo = hi = d[0]
                s_lo = s_hi = 1.0
            else:
                (lo,), vlo = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
                (hi,), vhi = eigh_tridiagonal(d, e, select="i", select_range=(d.size - 1, d.size - 1))
                s_lo, s_hi = vlo[-1, 0], vhi[-1, 0]
            r_lo, r_hi = abs(b * s_lo), abs(b * s_hi)
            res = max(r_lo, r_hi)
            if breakdown or (_settled(lo, r_lo, prev[0], tol) and _settled(hi, r_hi, prev[1], tol)):
                return float(lo), float(hi), (0.0 if breakdown else res), j + 1
            prev = (lo, hi)
        if j + 1 == m_max:
            break
        if j + 1 >= Q.shape[0] - 1:
            grown = np.empty((min(2 * Q.shape[0], m_max + 1), n))
            grown[:j + 1] = Q[:j + 1]
            Q = grown
        off.append(b)
        Q[j + 1] = w / b
    raise ConvergenceError(
        f"Lanczos did not converge in {m_max} steps (residual {res:.3e})",
        residual=res, iterations=m_max)


def extreme_eigenvalues(P, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, *,
                        dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
                        method: str = "lanczos") -> SpectralBounds:
    """Smallest and largest eigenvalue of a symmetric graph.

    Graphs with at most ``dense_threshold`` items use a full symmetric
    eigendecomposition. Larger graphs are solved iteratively from the
    normalized all-ones vector plus a fixed small deterministic
    perturbation (so the start is never orthogonal to an extreme
    eigenvector in practice):

    * ``method="lanczos"`` (default): Lanczos with full reorthogonalization,
      both extremes from one Krylov basis.
    * ``method="power"``: power iteration on ``P + c I`` (``c`` a Gershgorin
      shift making the spectrum nonnegative) for the largest eigenvalue,
      then on ``lmax I - P`` for the smallest. Slow when the spectrum
      clusters at an end.

    Convergence means the eigen-residual is at most ``tol * max(1, |theta|)``,
    which bounds the eigenvalue error by the same amount.
    """
    A = _adjacency(P)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n or n == 0:
        raise InputError(f"graph must be a nonempty square matrix, got shape {A.shape}")
    if not mx.is_symmetric(A, SYMMETRY_ATOL):
        raise InputError("graph adjacency is not symmetric")

    if n <= dense_threshold:
        dense = A.toarray() if sp.issparse(A) else A
        w = np.linalg.eigvalsh(dense)
        return SpectralBounds(float(w[0]), float(w[-1]), "dense", 0.0, 0)

    if not sp.issparse(A) and np.count_nonzero(A) < SPARSE_MATVEC_DENSITY * n * n:
        A = sp.csr_matrix(A)
    v0 = _start_vector(n)
    if method == "lanczos":
        lmin, lmax, res, its = _lanczos(A, v0, tol, max_iter)
        return SpectralBounds(lmin, lmax, "iterative", res, its)
    if method != "power":
        raise InputError(f"unknown eigenvalue method {method!r}")
    shift = max(0.0, -_gershgorin_lower(A))
    lmax, r1, it1 = _power(A, 1.0, shift, v0, tol, max_iter, "lambda_max")
    lmin, r2, it2 = _power(A, -1.0, lmax, v0, tol, max_iter, "lambda_min")
    lmin = min(lmin, lmax)
    return SpectralBounds(lmin, lmax, "iterative", max(r1, r2), it1 + it2)


# --------------------------------------------------------------------------
# filters
# --------------------------------------------------------------------------

@dataclass
class FilteredGraph:
    """A filtered graph, either materialized or kept as an operator.

    When ``adjacency`` is ``None`` the filter is applied on demand from the
    sparse ``base`` graph through :meth:`right_multiply`.
    """

    n_items: int
    adjacency: np.ndarray | None
    bounds: SpectralBounds
    spec: FilterSpec
    degenerate: bool = False
    base: object = field(default=None, repr=False)

    @property
    def materialized(self) -> bool:
        return self.adjacency is not None

    def right_multiply(self, Y) -> np.ndarray:
        """``Y @ P_f`` for a dense or sparse block of row signals ``Y``."""
        if Y.shape[1] != self.n_items:
            raise InputError(f"signal block of shape {Y.shape} does not match {self.n_items} items")
        if self.adjacency is not None:
            return mx.matmat(Y, self.adjacency)
        if self.degenerate:
            return np.zeros((Y.shape[0], self.n_items))
        Q = _shifted(self.base, self.bounds.lambda_min)
        c = self.spec.scaled_coefficients(self.bounds.lambda_star) if self.spec.order > 1 \
            else np.asarray(self.spec.coefficients)
        Z = c[-1] * Y
        for ck in c[-2::-1]:
            Z = Z @ Q + ck * Y
        Z = Z @ Q
        if sp.issparse(Z):
            Z = Z.toarray()
        return np.ascontiguousarray(Z, dtype=np.float64)


def _shifted(A, lambda_min: float):
    if sp.issparse(A):
        return (A - lambda_min * sp.identity(A.shape[0], format="csr")).tocsr()
    Q = np.array(A, dtype=np.float64, copy=True)
    Q[np.diag_indices_from(Q)] -= lambda_min
    return Q


def _filter(P, bounds: SpectralBounds, spec: FilterSpec, materialize: bool,
            dense_cap: int) -> FilteredGraph:
    A = _adjacency(P)
    n = A.shape[0]
    if not materialize:
        if not sp.issparse(A):
            A = sp.csr_matrix(A)
        return FilteredGraph(n, None, bounds, spec, False, A)
    if n > dense_cap:
        raise CapacityError(f"materializing a {n}x{n} filtered graph exceeds the cap of {dense_cap}")

    Q = _shifted(A.toarray() if sp.issparse(A) else A, bounds.lambda_min)
    if spec.order == 1:
        # no normalization enters the linear term
        H = spec.coefficients[0] * Q
    else:
        c = spec.scaled_coefficients(bounds.lambda_star)
        H = c[-1] * Q
        diag = np.diag_indices_from(H)
        for ck in c[-2:0:-1]:
            H[diag] += ck
            H = Q @ H
        H[diag] += c[0]
        H = Q @ H
        H += H.T
        H *= 0.5
    return FilteredGraph(n, H, bounds, spec, False)


def apply_polynomial_filter(P, bounds: SpectralBounds, spec: FilterSpec, *,
                            materialize: bool = True, eps: float = DEGENERATE_EPS,
                            dense_cap: int = mx.DEFAULT_DENSE_CAP) -> FilteredGraph:
    """Shift-normalized polynomial filter of ``P``.

    Evaluated by Horner's rule on ``Q = P - lambda_min I`` using dense
    products. A spectral span at or below ``eps`` yields a zero graph with
    ``degenerate=True`` and a :class:`DegenerateSpectrumWarning`.
    """
    if spec.kind != "polynomial":
        raise InputError("apply_polynomial_filter needs a polynomial FilterSpec; "
                         "use apply_linear_lpf for the linear filter")
    A = _adjacency(P)
    n = A.shape[0]
    if bounds.lambda_star <= eps:
        warnings.warn(f"spectral span {bounds.lambda_star:.3e} <= {eps:g}; "
                      "filtered graph set to zero", DegenerateSpectrumWarning, stacklevel=2)
        adj = np.zeros((n, n)) if materialize else None
        return FilteredGraph(n, adj, bounds, spec, True, None if materialize else A)
    return _filter(A, bounds, spec, materialize, dense_cap)


def apply_linear_lpf(P, bounds: SpectralBounds, *, materialize: bool = True,
                     dense_cap: int = mx.DEFAULT_DENSE_CAP) -> FilteredGraph:
    """``P - lambda_min I``; well defined even for a zero spectral span."""
    return _filter(P, bounds, FilterSpec.linear(), materialize, dense_cap)


def apply_filter(P, bounds: SpectralBounds, spec: FilterSpec, **kwargs) -> FilteredGraph:
    if spec.kind == "linear_lpf":
        kwargs.pop("eps", None)
        return apply_linear_lpf(P, bounds, **kwargs)
    return apply_polynomial_filter(P, bounds, spec, **kwargs)


def filter_response(spec: FilterSpec, bounds: SpectralBounds, lam):
    """Frequency response ``h(lam)`` for Laplacian frequencies in ``[0, lambda_star]``."""
    lstar = bounds.lambda_star
    x = np.asarray(lam, dtype=np.float64)
    if np.any(x < 0) or np.any(x > lstar) or not np.all(np.isfinite(x)):
        raise InputError(f"frequency {lam!r} outside [0, {lstar:g}]")
    if lstar <= 0:
        out = np.zeros_like(x)
    else:
        base = lstar - x
        out = np.zeros_like(x)
        for k, a in enumerate(spec.coefficients, start=1):
            out = out + a * base ** k / lstar ** (k - 1)
    return float(out) if out.ndim == 0 else out


def response_table(spec: FilterSpec, bounds: SpectralBounds, samples: int = 101) -> str:
    lam = np.linspace(0.0, bounds.lambda_star, samples)
    h = filter_response(spec, bounds, lam)
    buf = io.StringIO()
    buf.write("lambda\tresponse\n")
    for x, y in zip(np.atleast_1d(lam), np.atleast_1d(h)):
        buf.write(f"{x:.10g}\t{y:.10g}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    lambda_min: float
    lambda_max: float

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_left\tbin_right\tcount\n")
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            buf.write(f"{lo:.10g}\t{hi:.10g}\t{int(c)}\n")
        buf.write(f"#lambda_min\t{self.lambda_min:.10g}\n")
        buf.write(f"#lambda_max\t{self.lambda_max:.10g}\n")
        return buf.getvalue()


def spectrum_histogram(P, bins: int, *, max_items: int = HISTOGRAM_MAX_ITEMS) -> Histogram:
    """Histogram of all eigenvalues of ``P`` over ``[lambda_min, lambda_max]``."""
    A = _adjacency(P)
    n = A.shape[0]
    if n > max_items:
        raise CapacityError(f"{n} items exceed the eigendecomposition limit of {max_items}; "
                            "subsample the catalog or raise the limit")
    if bins < 1:
        raise InputError(f"bins must be positive, got {bins}")
    dense = A.toarray() if sp.issparse(A) else A
    if not mx.is_symmetric(dense, SYMMETRY_ATOL):
        raise InputError("graph adjacency is not symmetric")
    w = np.linalg.eigvalsh(dense)
    counts, edges = np.histogram(w, bins=bins)
    return Histogram(edges, counts, float(w[0]), float(w[-1]))


def smoothness(x: Sequence[float], A) -> float:
    """Graph-signal smoothness ``sum_ij A_ij (x_i - x_j)**2``."""
    A = _adjacency(A)
    x = np.asarray(x, dtype=np.float64)
    if A.shape[0] != A.shape[1] or x.shape != (A.shape[0],):
        raise InputError(f"signal of shape {x.shape} does not match graph {A.shape}")
    if not mx.is_symmetric(A, SYMMETRY_ATOL):
        raise InputError("graph adjacency is not symmetric")
    rows = np.asarray(A.sum(axis=1)).ravel()
    cols = np.asarray(A.sum(axis=0)).ravel()
    x2 = x * x
    return float(x2 @ rows + x2 @ cols - 2.0 * (x @ (A @ x)))
