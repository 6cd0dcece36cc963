"""Weak observability certificates.

Two forms are handled.  The *static* form fixes a horizon ``T`` and a
contraction factor ``delta``::

    W_T <= D G_o(T) + delta N

and the *dynamic* form holds for every ``t >= 0``::

    W_t <= D_alpha G_o(t) + C_alpha exp(-alpha t) N

where ``N = M_H^{-1}``, ``W_t = exp(A t) N exp(A^T t)`` and
``G_o(t) = int_0^t exp(A s) B M_U^{-1} B^T exp(A^T s) ds``.  All inequalities
are in the Loewner order and are checked as generalized eigenvalue problems
against ``N``.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, InputError, NotStabilizedAtRate, PrecisionError
from .numerics import (
    DEFAULT_QUAD,
    congruence_integral,
    expm,
    expm_nodes,
    metric_norm,
    pencil_eigh,
    solve_lyapunov,
    spectral_abscissa,
    sym_pencil_extremes,
    symmetrize,
)

KERNEL_RTOL = 1e-10
PRECISION_RTOL = 1e-6
D_INFLATION = 1.05
SUP_INFLATION = 1.02
SUP_GRID = 200
FEEDBACK_GRID = 400
MARGIN_TOL = -1e-7

PROVENANCES = ("converted-from-static", "from-feedback", "user-supplied")


@dataclass(frozen=True)
class StaticCert:
    T: float
    delta: float
    D: float

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"static certificate needs T > 0, got {self.T}")
        if not 0 < self.delta < 1:
            raise DomainError(f"static certificate needs delta in (0, 1), got {self.delta}")
        if not self.D >= 0:
            raise DomainError(f"static certificate needs D >= 0, got {self.D}")


@dataclass(frozen=True)
class Infeasible:
    """No finite ``D`` works: ``W_T - delta N`` is positive somewhere on the
    kernel of ``G_o(T)``."""

    T: float
    delta: float
    kernel_excess: float

    def __bool__(self):
        return False


@dataclass(frozen=True)
class ObservabilityCertificate:
    alpha: float
    D_alpha: float
    C_alpha: float
    provenance: str = "user-supplied"
    validated_grid: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"certificate needs alpha > 0, got {self.alpha}")
        if not (math.isfinite(self.D_alpha) and self.D_alpha >= 0):
            raise DomainError(f"certificate needs D_alpha >= 0, got {self.D_alpha}")
        if not (math.isfinite(self.C_alpha) and self.C_alpha >= 1):
            raise DomainError(f"certificate needs C_alpha >= 1, got {self.C_alpha}")
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "D_alpha": self.D_alpha,
            "C_alpha": self.C_alpha,
            "provenance": self.provenance,
            "grid": [{"t": t, "margin": m} for t, m in self.validated_grid],
        }


def certificate_to_json(cert):
    return json.dumps(cert.to_dict(), indent=2, allow_nan=False)


def load_certificate(document):
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, dict):
        raise InputError("certificate document must be a JSON object")
    try:
        grid = tuple((float(p["t"]), float(p["margin"])) for p in doc.get("grid", []))
        return ObservabilityCertificate(
            float(doc["alpha"]),
            float(doc["D_alpha"]),
            float(doc["C_alpha"]),
            doc.get("provenance", "user-supplied"),
            grid,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed certificate document: {exc}") from exc


# --------------------------------------------------------------------------
# building blocks


def controllability_gram(sys, t, quad=DEFAULT_QUAD):
    """``G_o(t)`` with its quadrature error estimate."""
    return congruence_integral(sys.A, sys.control_gram, 0.0, t, quad)


def transition_form(sys, t):
    """``W_t = exp(A t) M_H^{-1} exp(A^T t)``."""
    E = expm(sys.A, t)
    return symmetrize(E @ sys.J_H @ E.T)


def _check_precision(G, err):
    scale = float(np.max(np.abs(G))) if G.size else 0.0
    if err > PRECISION_RTOL * scale:
        raise PrecisionError(
            f"quadrature error estimate {err:.3e} exceeds {PRECISION_RTOL:g} x |G_o| = {PRECISION_RTOL * scale:.3e}; "
            "increase the number of panels"
        )


def _relative_margin(S, N, scale_form):
    lo, _ = sym_pencil_extremes(S, N)
    _, hi = sym_pencil_extremes(scale_form, N)
    return lo / max(1.0, abs(hi))


# --------------------------------------------------------------------------
# static certificates


def minimal_static_D(sys, T, delta, quad=DEFAULT_QUAD):
    """Smallest ``D`` for the static inequality, or :class:`Infeasible`.

    The range of ``G_o(T)`` is handled as a generalized eigenproblem; its
    kernel is eliminated by a Schur complement, which requires
    ``W_T - delta N`` to be negative definite there.
    """
    G, err = controllability_gram(sys, T, quad)
    _check_precision(G, err)
    S = transition_form(sys, T) - delta * sys.J_H
    gnorm = float(np.linalg.norm(G, 2))
    w, U = np.linalg.eigh(G)
    rng = w > KERNEL_RTOL * gnorm if gnorm > 0 else np.zeros(w.size, dtype=bool)
    V, Z = U[:, rng], U[:, ~rng]
    if Z.shape[1]:
        Szz = symmetrize(Z.T @ S @ Z)
        top = float(np.linalg.eigvalsh(Szz)[-1])
        if top >= -1e-12 * max(1.0, float(np.linalg.norm(S, 2))):
            return Infeasible(T, delta, top)
    if not V.shape[1]:
        return 0.0
    Svv = V.T @ S @ V
    if Z.shape[1]:
        Svz = V.T @ S @ Z
        Svv = Svv - Svz @ np.linalg.solve(Z.T @ S @ Z, Svz.T)
    _, hi = sym_pencil_extremes(symmetrize(Svv), symmetrize(V.T @ G @ V))
    return max(0.0, hi)


def certify_static(sys, T, delta, quad=DEFAULT_QUAD):
    """Static certificate at ``(T, delta)`` with a 5% margin on ``D``.

    Examples
    --------
    >>> from stabkit.systems import make_example
    >>> c = certify_static(make_example("scalar-unstable"), 1.0, 0.5)
    >>> round(c.D, 3)
    2.264
    """
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    D = minimal_static_D(sys, T, delta, quad)
    if isinstance(D, Infeasible):
        return D
    return StaticCert(float(T), float(delta), D_INFLATION * D)


def check_static(sys, cert, quad=DEFAULT_QUAD):
    """Relative margin of ``D G_o(T) + delta N - W_T`` against ``N``."""
    return iterate_static(sys, cert, 1, quad)[0]


def iterate_static(sys, cert, n, quad=DEFAULT_QUAD):
    """Margins of the iterated static bound at horizons ``kT``, ``k = 1..n``::

        W_{kT} <= D (1 + delta + ... + delta^{k-1}) G_o(kT) + delta^k N
    """
    if int(n) < 1:
        raise DomainError("iteration count must be at least 1")
    N = sys.J_H
    G_T, err = controllability_gram(sys, cert.T, quad)
    _check_precision(G_T, err)
    E_T = expm(sys.A, cert.T)
    G, E = G_T.copy(), E_T.copy()
    margins = []
    for k in range(1, int(n) + 1):
        if k > 1:
            # G_o((k+1)T) = G_o(kT) + exp(A kT) G_o(T) exp(A kT)^T
            G = symmetrize(G + E @ G_T @ E.T)
            E = E @ E_T
        W = symmetrize(E @ N @ E.T)
        geometric = sum(cert.delta**j for j in range(k))
        bound = cert.D * geometric * G + cert.delta**k * N
        margins.append(_relative_margin(bound - W, N, W))
    return margins


# --------------------------------------------------------------------------
# conversions


def sup_transition_norm(sys, T, grid=SUP_GRID):
    """Max over ``sigma in [0, T]`` of the dual-norm of ``exp(A^T sigma)``."""
    ts = np.linspace(0.0, T, grid)
    E = expm_nodes(sys.A.T, ts)
    N = sys.J_H
    return max(metric_norm(Ek, N) for Ek in E)


def static_to_dynamic(sys, cert, validate=True, quad=DEFAULT_QUAD):
    """Dynamic certificate from a static one.

    ``alpha = -ln(delta)/T``; with ``kappa`` the sup of the transition norm on
    ``[0, T]`` (inflated 2%), ``C_alpha = max(1, kappa^2 e^{alpha T})`` and
    ``D_alpha = kappa^2 D / (1 - delta)``.
    """
    alpha = -math.log(cert.delta) / cert.T
    kappa = SUP_INFLATION * sup_transition_norm(sys, cert.T)
    growth = math.exp(alpha * cert.T)
    out = ObservabilityCertificate(
        alpha,
        kappa**2 * cert.D / (1.0 - math.exp(-alpha * cert.T)),
        max(1.0, kappa**2 * growth),
        "converted-from-static",
    )
    if validate:
        out = validate_certificate(sys, out, 5.0 * cert.T, quad=quad).certificate
    return out


def dynamic_to_static(cert):
    """Static certificate with ``delta = 1/2`` at ``T = (ln C + ln 2)/alpha``."""
    T = (math.log(cert.C_alpha) + math.log(2.0)) / cert.alpha
    return StaticCert(T, 0.5, cert.D_alpha)


def constants_from_feedback(sys, K, theta, grid=FEEDBACK_GRID):
    """Dynamic certificate at ``alpha = 2 theta`` from a stabilizing gain.

    ``C_1`` bounds ``e^{theta t} |exp((A+BK) t)|`` on ``[0, 20/theta]`` and
    ``D_1^2`` is the largest control energy ``int |K x(t)|^2 dt`` per unit
    initial state; the result is ``(2 theta, 2 D_1^2, 2 C_1^2)``.
    """
    theta = float(theta)
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    K = np.asarray(K, dtype=float)
    if K.shape != (sys.m, sys.n):
        raise DomainError(f"gain must have shape ({sys.m}, {sys.n}), got {K.shape}")
    A_cl = sys.A + sys.B @ K
    abscissa = spectral_abscissa(A_cl)
    if not abscissa < -theta:
        raise NotStabilizedAtRate(
            f"closed loop has spectral abscissa {abscissa:.6g}, not below -theta = {-theta:.6g}", abscissa
        )
    ts = np.linspace(0.0, 20.0 / theta, grid)
    E = expm_nodes(A_cl, ts)
    C1 = SUP_INFLATION * max(math.exp(theta * t) * metric_norm(Ek, sys.M_H) for t, Ek in zip(ts, E))
    W = solve_lyapunov(A_cl, symmetrize(K.T @ sys.M_U @ K))
    _, D1sq = sym_pencil_extremes(W, sys.M_H)
    D1sq = max(0.0, D1sq)
    return ObservabilityCertificate(2.0 * theta, 2.0 * D1sq, 2.0 * C1**2, "from-feedback")


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    certificate: ObservabilityCertificate
    grid: tuple
    min_margin: float
    passed: bool


def validate_certificate(sys, cert, t_max, grid=101, quad=DEFAULT_QUAD, tol=MARGIN_TOL):
    """Check the dynamic inequality on a uniform grid of ``[0, t_max]``.

    ``G_o`` is accumulated step by step with
    ``G_o(t + h) = G_o(t) + exp(A t) G_o(h) exp(A t)^T``.  The margin at each
    node is the smallest eigenvalue of the pencil
    ``(D G_o + C e^{-alpha t} N - W_t, N)`` relative to the size of ``W_t``.
    """
    if not t_max > 0:
        raise DomainError(f"t_max must be positive, got {t_max}")
    if int(grid) < 2:
        raise DomainError("validation grid needs at least 2 points")
    ts = np.linspace(0.0, float(t_max), int(grid))
    h = ts[1] - ts[0]
    N = sys.J_H
    G_h, err = controllability_gram(sys, h, quad)
    _check_precision(G_h, err)
    E = expm_nodes(sys.A, ts)
    G = np.zeros_like(N)
    points = []
    for k, t in enumerate(ts):
        if k:
            G = symmetrize(G + E[k - 1] @ G_h @ E[k - 1].T)
        W = symmetrize(E[k] @ N @ E[k].T)
        S = cert.D_alpha * G + cert.C_alpha * math.exp(-cert.alpha * t) * N - W
        points.append((float(t), float(_relative_margin(S, N, W))))
    lowest = min(m for _, m in points)
    out = replace(cert, validated_grid=tuple(points))
    return ValidationReport(out, tuple(points), lowest, lowest >= tol)


def dual_norm_profile(sys, ts):
    """``|exp(A^T t)|`` in the dual norm at each ``t``; diagnostic helper."""
    E = expm_nodes(sys.A.T, np.asarray(ts, dtype=float))
    return np.array([metric_norm(Ek, sys.J_H) for Ek in E])


__all__ = [
    "StaticCert",
    "Infeasible",
    "ObservabilityCertificate",
    "ValidationReport",
    "certify_static",
    "minimal_static_D",
    "check_static",
    "iterate_static",
    "static_to_dynamic",
    "dynamic_to_static",
    "constants_from_feedback",
    "validate_certificate",
    "controllability_gram",
    "transition_form",
    "certificate_to_json",
    "load_certificate",
]
