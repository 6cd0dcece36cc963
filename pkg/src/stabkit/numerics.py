"""Dense real linear algebra for small systems.

Matrices are plain ``float64`` numpy arrays.  The expensive pieces (matrix
exponentials at quadrature nodes, congruence stacks) are delegated to
:mod:`stabkit._kernels`, which runs either numba-compiled loops or batched
numpy depending on ``STABKIT_BACKEND``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .errors import DimensionError, DomainError, ShapeError

SYM_RTOL = 1e-10
PSD_RTOL = 1e-8


def as_mat(x, name="matrix", square=False):
    """Validate and convert ``x`` to a finite 2-D float array."""
    a = np.array(x, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got {a.ndim} dimension(s)")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name}: entries must be finite")
    return a


def symmetrize(S):
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class QuadSpec:
    """Composite quadrature rule on ``panels`` equal panels.

    ``rule`` is ``"simpson"`` (three nodes per panel, fixed) or ``"gauss"``
    (Gauss-Legendre with ``nodes_per_panel`` nodes, 2 to 10).
    """

    rule: str = "simpson"
    panels: int = 256
    nodes_per_panel: int = 3

    def __post_init__(self):
        if self.rule not in ("simpson", "gauss"):
            raise DomainError(f"unknown quadrature rule {self.rule!r}")
        if int(self.panels) < 1:
            raise DomainError("quadrature needs at least one panel")
        if self.rule == "simpson" and self.nodes_per_panel != 3:
            raise DomainError("composite Simpson uses exactly 3 nodes per panel")
        if self.rule == "gauss" and not 2 <= self.nodes_per_panel <= 10:
            raise DomainError("Gauss-Legendre panels take 2 to 10 nodes")

    def doubled(self):
        return QuadSpec(self.rule, 2 * self.panels, self.nodes_per_panel)

    def with_panels(self, panels):
        return QuadSpec(self.rule, int(panels), self.nodes_per_panel)


DEFAULT_QUAD = QuadSpec()


def rule_nodes(a, b, spec=DEFAULT_QUAD):
    """Nodes and weights of ``spec`` on ``[a, b]``."""
    a, b = float(a), float(b)
    p = spec.panels
    if spec.rule == "simpson":
        x = np.linspace(a, b, 2 * p + 1)
        w = np.empty(2 * p + 1)
        w[0::2] = 2.0
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return x, w * (b - a) / (6.0 * p)
    g, gw = np.polynomial.legendre.leggauss(spec.nodes_per_panel)
    edges = np.linspace(a, b, p + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    return x, w


def paired_rule(a, b, spec=DEFAULT_QUAD):
    """Nodes covering ``spec`` and its panel-doubled refinement.

    Returns ``(nodes, w_coarse, w_fine)`` with both weight vectors indexed
    over the shared node array, so one batch of integrand samples serves
    both the value and its error estimate.
    """
    xf, wf = rule_nodes(a, b, spec.doubled())
    if spec.rule == "simpson":
        # the doubled Simpson grid contains every coarse node
        wc = np.zeros_like(wf)
        wc[0::2] = rule_nodes(a, b, spec)[1]
        return xf, wc, wf
    xc, wc = rule_nodes(a, b, spec)
    nodes = np.concatenate([xc, xf])
    return nodes, np.concatenate([wc, np.zeros_like(wf)]), np.concatenate([np.zeros_like(wc), wf])


def combine_samples(F, w_coarse, w_fine):
    """Apply paired weights to a ``(k, r, c)`` sample stack.

    Summation runs in node order, so results are reproducible bit for bit.
    """
    coarse = np.tensordot(w_coarse, F, axes=1)
    fine = np.tensordot(w_fine, F, axes=1)
    err = float(np.max(np.abs(coarse - fine))) if coarse.size else 0.0
    return coarse, err


def integrate_mat(f: Callable[[float], np.ndarray], a, b, spec=DEFAULT_QUAD):
    """Integrate a matrix-valued function over ``[a, b]``.

    Returns ``(value, err_estimate)`` where the estimate is the entrywise
    max difference against the same rule on twice as many panels.
    """
    if not a <= b:
        raise DomainError(f"integration bounds must satisfy a <= b, got [{a}, {b}]")
    nodes, wc, wf = paired_rule(a, b, spec)
    first = np.asarray(f(float(nodes[0])), dtype=float)
    if first.ndim != 2:
        raise ShapeError("integrand must return a 2-D matrix")
    F = np.empty((nodes.size,) + first.shape)
    F[0] = first
    for i in range(1, nodes.size):
        v = np.asarray(f(float(nodes[i])), dtype=float)
        if v.shape != first.shape:
            raise ShapeError(f"integrand returned shape {v.shape} at s={nodes[i]:g}, expected {first.shape}")
        F[i] = v
    return combine_samples(F, wc, wf)


def expm(A, t=1.0):
    """``exp(t A)`` by scaling and squaring with a degree-13 Pade approximant."""
    A = as_mat(A, "A", square=True)
    t = float(t)
    if not np.isfinite(t):
        raise DomainError("t must be finite")
    return _kernels.expm(np.ascontiguousarray(A * t))


def expm_nodes(A, ts):
    """Stack of ``exp(t_k A)`` for every ``t_k`` in ``ts``."""
    return _kernels.expm_stack(np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(ts, dtype=float))


def congruence_integral(M, X, t0, t1, spec=DEFAULT_QUAD, weight=None):
    """``int_{t0}^{t1} w(s) exp(M s) X exp(M s)^T ds`` with an error estimate.

    ``weight`` maps an array of nodes to an array of scalar weights; it
    defaults to 1.
    """
    nodes, wc, wf = paired_rule(t0, t1, spec)
    E = expm_nodes(M, nodes)
    F = _kernels.congruence_stack(E, np.ascontiguousarray(X, dtype=float))
    if weight is not None:
        w = np.asarray(weight(nodes), dtype=float)
        wc, wf = wc * w, wf * w
    value, err = combine_samples(F, wc, wf)
    return symmetrize(value), err


@dataclass(frozen=True)
class NotSPD:
    """Cholesky failed; ``pivot`` is the 1-based index of the bad pivot."""

    pivot: int

    def __bool__(self):
        return False


def check_symmetric(M, name="matrix"):
    M = as_mat(M, name, square=True)
    scale = max(float(np.max(np.abs(M))), np.finfo(float).tiny) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYM_RTOL * scale:
        raise DomainError(f"{name}: not symmetric")
    return M


def chol_spd(M):
    """Lower Cholesky factor of a symmetric matrix, or :class:`NotSPD`."""
    M = check_symmetric(M)
    L, pivot = _kernels.cholesky(np.ascontiguousarray(symmetrize(M)))
    if pivot:
        return NotSPD(int(pivot))
    return L


def _whiten(S, Mpd):
    L = chol_spd(Mpd)
    if isinstance(L, NotSPD):
        raise DomainError(f"pencil metric is not positive definite (pivot {L.pivot})")
    Y = solve_triangular(L, symmetrize(S), lower=True)
    C = solve_triangular(L, Y.T, lower=True)
    return symmetrize(C), L


def pencil_eigh(S, Mpd):
    """All generalized eigenpairs of ``S v = lam M v``, ascending."""
    S = as_mat(S, "S", square=True)
    Mpd = as_mat(Mpd, "M", square=True)
    if S.shape != Mpd.shape:
        raise ShapeError(f"pencil shapes differ: {S.shape} vs {Mpd.shape}")
    C, L = _whiten(S, Mpd)
    lam, Z = np.linalg.eigh(C)
    return lam, solve_triangular(L.T, Z, lower=False)


def sym_pencil_extremes(S, Mpd):
    """Smallest and largest generalized eigenvalue of ``(S, Mpd)``."""
    lam, _ = pencil_eigh(S, Mpd)
    return float(lam[0]), float(lam[-1])


def psd_margin(S, Mpd, scale=None):
    """Smallest eigenvalue of ``(S, Mpd)`` divided by ``max(1, scale)``.

    ``scale`` defaults to the largest eigenvalue magnitude of the pencil.
    Relative margins keep round-off on large operators from reading as a
    violation.
    """
    lo, hi = sym_pencil_extremes(S, Mpd)
    if scale is None:
        scale = max(abs(lo), abs(hi))
    return lo / max(1.0, float(scale))


def is_psd(S, Mpd=None):
    S = as_mat(S, "S", square=True)
    if Mpd is None:
        Mpd = np.eye(S.shape[0])
    lo, hi = sym_pencil_extremes(S, Mpd)
    return lo >= -PSD_RTOL * max(1.0, abs(lo), abs(hi))


def metric_norm(X, M):
    """Operator norm of ``X`` on the space with inner product ``x^T M y``."""
    X = as_mat(X, "X", square=True)
    lo, hi = sym_pencil_extremes(X.T @ M @ X, M)
    return float(np.sqrt(max(hi, 0.0)))


def spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(A).real))


def solve_lyapunov(F, Rhs):
    """Solve ``F^T W + W F = -Rhs`` through the Kronecker-vectorized system."""
    F = as_mat(F, "F", square=True)
    Rhs = check_symmetric(Rhs, "Rhs")
    n = F.shape[0]
    if Rhs.shape != (n, n):
        raise ShapeError(f"Rhs shape {Rhs.shape} does not match F {F.shape}")
    eye = np.eye(n)
    # row-major vec: vec(F^T W) = (F^T kron I) vec(W), vec(W F) = (I kron F^T) vec(W)
    K = np.kron(F.T, eye) + np.kron(eye, F.T)
    if np.linalg.cond(K) > 1e14:
        raise DomainError("Lyapunov operator is singular: F is not Hurwitz or the pencil is near-defective")
    w = np.linalg.solve(K, -Rhs.ravel())
    return symmetrize(w.reshape(n, n))
