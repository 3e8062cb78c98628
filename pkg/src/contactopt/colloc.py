"""K-point Radau collocation schemes and the Runge-Kutta basis representation.

A trajectory on a finite element of duration h is represented as

    z(t_0 + h*tau) = z0 + h * sum_j Omega_j(tau) * zdot_j,   tau in [0, 1],

where zdot_j are the time-derivative values at the K Radau nodes and
Omega_j is the antiderivative of the j-th Lagrange basis polynomial on
those nodes. Radau IIA places a node at tau = 1, so the element end state
is directly available and mesh continuity reduces to sharing that value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 5

__all__ = [
    "MAX_ORDER",
    "InvalidOrderError",
    "DegenerateBasisError",
    "CollocationScheme",
    "ElementState",
    "radau_nodes",
    "omega_matrix",
    "make_scheme",
    "interpolate",
    "continuity_residual",
]


class InvalidOrderError(ValueError):
    """Collocation order outside the supported range 1..MAX_ORDER."""


class DegenerateBasisError(ValueError):
    """Node set does not define a valid Lagrange basis (duplicates)."""


def _legendre_pair(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (P_k(x), P_{k-1}(x)) by the three-term recurrence."""
    p_prev = np.ones_like(x)
    if k == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for n in range(1, k):
        p, p_prev = ((2 * n + 1) * x * p - n * p_prev) / (n + 1), p
    return p, p_prev


def radau_nodes(K: int) -> np.ndarray:
    """Nodes of the K-point right-Radau scheme on (0, 1], ascending.

    The nodes are the roots of P_K(x) - P_{K-1}(x) on [-1, 1] (with x = 1
    always a root), mapped through tau = (x + 1)/2. Roots are computed from
    the companion matrix of the expanded polynomial and polished with Newton
    iterations on the Legendre recurrence, so no tabulated constants enter.
    """
    if not isinstance(K, (int, np.integer)) or isinstance(K, bool):
        raise InvalidOrderError(f"collocation order must be an integer, got {K!r}")
    if K < 1 or K > MAX_ORDER:
        raise InvalidOrderError(f"collocation order must be in 1..{MAX_ORDER}, got {K}")
    if K == 1:
        return np.array([1.0])

    coeffs = np.polynomial.legendre.leg2poly(
        np.array([0.0] * (K - 1) + [-1.0, 1.0])
    )
    roots = np.sort(np.polynomial.polynomial.polyroots(coeffs).real)

    # Newton polish of the interior roots in extended precision; x = 1 is a
    # root by construction. P'_k(x) = k (x P_k - P_{k-1}) / (x^2 - 1).
    x = roots[:-1].astype(np.longdouble)
    for _ in range(60):
        pk, pk1 = _legendre_pair(x, K)
        pk1b, pk2 = _legendre_pair(x, K - 1)
        dpk = K * (x * pk - pk1) / (x * x - 1.0)
        dpk1 = (K - 1) * (x * pk1b - pk2) / (x * x - 1.0) if K > 1 else 0.0
        step = (pk - pk1) / (dpk - dpk1)
        x = x - step
        if np.max(np.abs(step)) < np.longdouble(1e-18):
            break

    tau = np.empty(K)
    tau[:-1] = ((x + 1.0) / 2.0).astype(np.float64)
    tau[-1] = 1.0
    if np.any(np.diff(tau) <= 0) or tau[0] <= 0:
        raise DegenerateBasisError(f"Radau node computation failed for K={K}: {tau}")
    return tau


def _lagrange_antiderivatives(nodes: np.ndarray) -> np.ndarray:
    """Monomial coefficients (ascending) of each Omega_j, shape (K, K+1)."""
    K = len(nodes)
    if len(np.unique(nodes)) != K:
        raise DegenerateBasisError(f"duplicate collocation nodes: {nodes}")
    coeffs = np.zeros((K, K + 1))
    for j in range(K):
        others = np.delete(nodes, j)
        # ell_j(tau) = prod_{m != j} (tau - tau_m) / (tau_j - tau_m)
        num = np.array([1.0])
        for tm in others:
            num = np.convolve(num, np.array([-tm, 1.0]))
        denom = np.prod(nodes[j] - others) if K > 1 else 1.0
        ell = num / denom
        # antiderivative with Omega_j(0) = 0
        anti = np.concatenate(([0.0], ell / np.arange(1, K + 1)))
        coeffs[j, : anti.size] = anti
    return coeffs


def omega_matrix(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integrated-basis weights: omega[k, j] = Omega_j(tau_k), plus Omega_j(1).

    Exact coefficient expansion of the Lagrange basis followed by polynomial
    antidifferentiation; no quadrature tolerance is involved.
    """
    nodes = np.asarray(nodes, dtype=float)
    coeffs = _lagrange_antiderivatives(nodes)
    powers = nodes[:, None] ** np.arange(coeffs.shape[1])[None, :]
    omega = powers @ coeffs.T
    if nodes[-1] == 1.0:
        omega_end = omega[-1].copy()
    else:
        omega_end = np.ones(coeffs.shape[1]) @ coeffs.T
    return omega, omega_end


@dataclass(frozen=True)
class CollocationScheme:
    """Immutable K-point Radau collocation scheme.

    Attributes:
        K: collocation order, 1..MAX_ORDER.
        nodes: K node times in (0, 1], ascending, nodes[-1] == 1.
        omega: (K, K) integrated-basis weights, omega[k, j] = Omega_j(nodes[k]).
        omega_end: Omega_j(1); equals omega[-1] for Radau.
    """

    K: int
    nodes: np.ndarray
    omega: np.ndarray
    omega_end: np.ndarray
    _anti_coeffs: np.ndarray = field(repr=False, default=None)

    def basis_at(self, tau: float | np.ndarray) -> np.ndarray:
        """Omega_j(tau) for arbitrary tau; shape (..., K)."""
        tau = np.asarray(tau, dtype=float)
        powers = tau[..., None] ** np.arange(self._anti_coeffs.shape[1])
        return powers @ self._anti_coeffs.T

    @property
    def quadrature_weights(self) -> np.ndarray:
        """Weights b_j = Omega_j(1); integrate f via h * sum_j b_j f(tau_j)."""
        return self.omega_end


def make_scheme(K: int) -> CollocationScheme:
    """Build and validate a CollocationScheme of order K."""
    nodes = radau_nodes(K)
    omega, omega_end = omega_matrix(nodes)
    scheme = CollocationScheme(
        K=K, nodes=nodes, omega=omega, omega_end=omega_end,
        _anti_coeffs=_lagrange_antiderivatives(nodes),
    )
    _validate_scheme(scheme)
    return scheme


def _validate_scheme(s: CollocationScheme) -> None:
    assert s.nodes[-1] == 1.0
    assert np.all(np.diff(s.nodes) > 0)
    # Polynomial exactness: any degree <= K-1 derivative profile must be
    # reproduced through the integrated basis.
    rng = np.random.default_rng(12345)
    poly = rng.standard_normal(s.K)  # derivative coefficients, ascending
    deriv = lambda t: sum(c * t ** p for p, c in enumerate(poly))
    state = lambda t: sum(c * t ** (p + 1) / (p + 1) for p, c in enumerate(poly))
    d = deriv(s.nodes)
    rec = s.omega @ d
    exact = state(s.nodes)
    if not np.allclose(rec, exact, atol=1e-12, rtol=0):
        raise DegenerateBasisError(f"integrated basis fails exactness check for K={s.K}")


@dataclass
class ElementState:
    """State polynomial data for one finite element.

    z0 is the value at the element start, zdot the K derivative values at the
    collocation nodes (shape (K,) scalar case or (K, d)), h the duration.
    """

    z0: np.ndarray
    zdot: np.ndarray
    h: float

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        self.zdot = np.asarray(self.zdot, dtype=float)
        if not np.isfinite(self.h) or self.h <= 0:
            raise ValueError(f"element duration must be finite and positive, got {self.h}")
        if not (np.all(np.isfinite(self.z0)) and np.all(np.isfinite(self.zdot))):
            raise ValueError("element state entries must be finite")


def interpolate(element: ElementState, scheme: CollocationScheme, tau: float) -> np.ndarray:
    """Evaluate the element state polynomial at relative time tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    w = scheme.basis_at(tau)
    return element.z0 + element.h * np.tensordot(w, element.zdot, axes=(0, 0))


def collocation_value(element: ElementState, scheme: CollocationScheme, k: int) -> np.ndarray:
    """State value at collocation node k (0-based)."""
    return element.z0 + element.h * np.tensordot(scheme.omega[k], element.zdot, axes=(0, 0))


def continuity_residual(prev: ElementState, nxt: ElementState,
                        scheme: CollocationScheme) -> np.ndarray:
    """next.z0 minus the end value of prev; zero iff the mesh joint is continuous."""
    if np.shape(prev.z0) != np.shape(nxt.z0):
        raise ValueError(
            f"state dimension mismatch: {np.shape(prev.z0)} vs {np.shape(nxt.z0)}")
    return np.atleast_1d(nxt.z0 - interpolate(prev, scheme, 1.0))
