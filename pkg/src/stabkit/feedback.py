"""Feedback synthesis.

The main family builds ``K = -T D_alpha e^{alpha T} M_U^{-1} B^T Pi^{-1}`` from
a dynamic observability certificate; the closed loop ``A + B K`` then decays
at rate ``(alpha - eps)/2``.  Three baselines are provided for comparison:
the finite-horizon weighted Gramian of Komornik, the infinite-horizon
weighted Gramian of Urquiza and the LQ regulator.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, InputError, InternalPositivityViolation, PrecisionError, RateUnattainable
from .gramian import GramianBundle, admissible, gain_scale, pi_integral
from .numerics import (
    DEFAULT_QUAD,
    NotSPD,
    QuadSpec,
    chol_spd,
    congruence_integral,
    expm_nodes,
    metric_norm,
    solve_lyapunov,
    spectral_abscissa,
    symmetrize,
)
from .observability import ObservabilityCertificate, constants_from_feedback
from .systems import analyze, controllable_subspace

METHODS = (
    "mutated-main",
    "mutated-general",
    "rate-targeted-finite",
    "rate-targeted-infinite",
    "komornik",
    "urquiza",
    "lqr",
    "zero",
)
RATE_T_FACTOR = 1.1
URQUIZA_TAIL = 1e-10
URQUIZA_RTOL = 1e-10
URQUIZA_MAX_DOUBLINGS = 8


@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """A gain ``K`` (``u = K x``) and how it was obtained."""

    K: np.ndarray
    method: str
    predicted_rate: float
    params: dict = field(default_factory=dict)
    bundle: GramianBundle = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown feedback method {self.method!r}")
        K = np.array(self.K, dtype=float)
        if K.ndim != 2 or not np.all(np.isfinite(K)):
            raise DomainError("feedback gain must be a finite 2-D matrix")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "predicted_rate", float(self.predicted_rate))

    def closed_loop(self, sys):
        return sys.A + sys.B @ self.K

    def to_dict(self):
        return {
            "method": self.method,
            "K": self.K.tolist(),
            "predicted_rate": self.predicted_rate,
            "params": dict(self.params),
        }


def law_to_json(law):
    return json.dumps(law.to_dict(), indent=2, allow_nan=False)


def load_law(document):
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, dict):
        raise InputError("feedback law document must be a JSON object")
    try:
        return FeedbackLaw(doc["K"], doc["method"], float(doc["predicted_rate"]), dict(doc.get("params", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed feedback law document: {exc}") from exc


def _quad_params(quad):
    return {"rule": quad.rule, "panels": quad.panels, "nodes_per_panel": quad.nodes_per_panel}


def quad_from_params(params):
    return QuadSpec(params.get("rule", "simpson"), int(params.get("panels", 256)), int(params.get("nodes_per_panel", 3)))


def certificate_from_params(params):
    return ObservabilityCertificate(
        float(params["alpha"]), float(params["D_alpha"]), float(params["C_alpha"]), params.get("provenance", "user-supplied")
    )


# --------------------------------------------------------------------------
# the mutated-Gramian family


def _mutated(sys, cert, eps, T, quad, method, extra=None):
    bundle = pi_integral(sys, cert, eps, T, quad)
    # K = -c M_U^{-1} B^T Pi^{-1}; Pi is symmetric so solve for the transpose
    Y = np.linalg.solve(bundle.Pi, sys.B @ sys.J_U)
    K = -gain_scale(cert, T) * Y.T + 0.0
    params = {
        "alpha": cert.alpha,
        "D_alpha": cert.D_alpha,
        "C_alpha": cert.C_alpha,
        "provenance": cert.provenance,
        "eps": float(eps),
        "T": float(T),
        **_quad_params(quad),
    }
    if extra:
        params.update(extra)
    return FeedbackLaw(K, method, bundle.rate, params, bundle)


def synthesize_main(sys, cert, T, quad=DEFAULT_QUAD):
    """Gain at the smallest admissible ``eps``, ``eps_hat = ln(C_alpha)/T``.

    The predicted rate is ``(alpha - ln(C_alpha)/T)/2``; ``T`` must exceed
    ``ln(C_alpha)/alpha``.

    Examples
    --------
    >>> from stabkit.systems import make_example
    >>> law = synthesize_main(make_example("scalar-unstable"), ObservabilityCertificate(1.0, 3.0, 1.0), 1.0)
    >>> round(float(law.K[0, 0]), 4), law.predicted_rate
    (-3.751, 0.5)
    """
    verdict = admissible(cert, 0.0, T)
    if not verdict.in_window:
        raise DomainError(verdict.reason)
    return _mutated(sys, cert, verdict.eps_hat, T, quad, "mutated-main")


def synthesize_general(sys, cert, eps, T, quad=DEFAULT_QUAD):
    """Gain for an admissible pair ``(eps, T)``; predicted rate ``(alpha - eps)/2``."""
    verdict = admissible(cert, eps, T)
    if not verdict.ok:
        raise DomainError(verdict.reason)
    return _mutated(sys, cert, eps, T, quad, "mutated-general")


def synthesize_for_rate(sys, mu, quad=DEFAULT_QUAD, T_factor=RATE_T_FACTOR):
    """Gain achieving decay rate at least ``mu``.

    A baseline LQ gain for the shifted generator ``A + theta I`` supplies a
    certificate at ``alpha = 2 theta``, with ``theta`` halfway between ``mu``
    and the best achievable rate (or ``3 mu / 2`` when every rate is
    achievable).  ``T`` is ``T_factor`` times the smallest horizon that keeps
    the resulting rate above ``mu``.
    """
    mu = float(mu)
    if not mu > 0:
        raise DomainError(f"target rate must be positive, got {mu}")
    if not T_factor > 1:
        raise DomainError(f"T_factor must exceed 1, got {T_factor}")
    report = analyze(sys)
    omega_star = report.omega_star
    if not mu < omega_star:
        raise RateUnattainable(
            f"requested rate mu = {mu:g} is not below the best achievable rate omega* = {omega_star:.9g}", omega_star
        )
    finite = math.isfinite(omega_star)
    theta = 0.5 * (omega_star + mu) if finite else 1.5 * mu
    base = lqr_feedback(sys.with_A(sys.A + theta * np.eye(sys.n)))
    cert = constants_from_feedback(sys, base.K, theta)
    logC = math.log(cert.C_alpha)
    bound = logC / (omega_star - mu) if finite else logC / mu
    T = T_factor * bound
    eps = logC / T
    method = "rate-targeted-finite" if finite else "rate-targeted-infinite"
    extra = {"mu": mu, "theta": theta, "omega_star": omega_star if finite else "inf", "T_bound": bound}
    verdict = admissible(cert, eps, T)
    if not verdict.ok:
        raise DomainError(verdict.reason)
    return _mutated(sys, cert, eps, T, quad, method, extra)


# --------------------------------------------------------------------------
# baselines


def _require_controllable(sys, method):
    report = analyze(sys)
    if not report.controllable:
        raise DomainError(f"{method} requires exact controllability; uncontrollable modes {list(report.uncontrollable_modes)}")


def _gain_from_gramian(sys, G, what):
    if isinstance(chol_spd(symmetrize(G)), NotSPD):
        raise InternalPositivityViolation(f"{what} Gramian is not positive definite")
    return -np.linalg.solve(G, sys.B @ sys.J_U).T


def komornik_weight(omega, T):
    """Weight ``e^{-2 omega s}`` on ``[0, T]`` followed by a linear ramp to 0
    at ``T + 1/(2 omega)``."""
    T_w = T + 0.5 / omega

    def w(s):
        s = np.asarray(s, dtype=float)
        ramp = 2.0 * omega * math.exp(-2.0 * omega * T) * (T_w - s)
        return np.where(s <= T, np.exp(-2.0 * omega * s), np.clip(ramp, 0.0, None))

    return w


def komornik_feedback(sys, omega, T, quad=DEFAULT_QUAD):
    """``K = -M_U^{-1} B^T G^{-1}`` with ``G`` the ramp-weighted Gramian of
    ``exp(-A s)`` over ``[0, T + 1/(2 omega)]``."""
    if not omega > 0 or not T > 0:
        raise DomainError("komornik feedback needs omega > 0 and T > 0")
    _require_controllable(sys, "komornik")
    X = sys.control_gram
    n = sys.n
    T_w = T + 0.5 / omega
    # exp(-2 omega s) Phi(s) is a congruence by exp((-A - omega I) s)
    G1, _ = congruence_integral(-sys.A - omega * np.eye(n), X, 0.0, T, quad)
    ramp = 2.0 * omega * math.exp(-2.0 * omega * T)
    G2, _ = congruence_integral(-sys.A, X, T, T_w, quad, weight=lambda s: ramp * (T_w - s))
    K = _gain_from_gramian(sys, G1 + G2, "komornik")
    return FeedbackLaw(K, "komornik", float(omega), {"omega": float(omega), "T": float(T), **_quad_params(quad)})


def growth_bound(A, M=None, grid=200):
    """Estimate ``inf_{t>0} ln|exp(A t)| / t`` over a logarithmic grid."""
    n = A.shape[0]
    M = np.eye(n) if M is None else M
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    ts = np.geomspace(1e-3, 40.0, grid) / scale
    E = expm_nodes(A, ts)
    return min(math.log(metric_norm(Ek, M)) / t for t, Ek in zip(ts, E))


def urquiza_gramian(sys, omega, quad=DEFAULT_QUAD):
    """``int_0^inf e^{-2 omega s} exp(-A s) X exp(-A^T s) ds`` by truncated
    quadrature.

    The tail beyond ``tau`` equals ``E G E^T`` with ``E = exp(-(A + omega I) tau)``,
    so ``|tail| <= |E|^2 |G|``; ``tau`` is doubled until ``|E|^2`` is below
    the tail tolerance, and panels are doubled until the quadrature estimate
    is below ``1e-10 |G|``.
    """
    n = sys.n
    M = -sys.A - omega * np.eye(n)
    a_minus = spectral_abscissa(-sys.A)
    if not omega > a_minus:
        raise DomainError(
            f"Urquiza Gramian diverges: need omega > abscissa of -A = {a_minus:.6g}, got omega = {omega:g}"
        )
    tau = 1.0 / (omega - a_minus)
    for _ in range(60):
        E = expm_nodes(M, np.array([tau]))[0]
        if np.linalg.norm(E, 2) ** 2 <= URQUIZA_TAIL:
            break
        tau *= 2.0
    else:
        raise ConvergenceError("could not find a truncation horizon for the Urquiza Gramian")
    spec = quad
    for _ in range(URQUIZA_MAX_DOUBLINGS + 1):
        G, err = congruence_integral(M, sys.control_gram, 0.0, tau, spec)
        if err <= URQUIZA_RTOL * float(np.max(np.abs(G))):
            return G, tau, spec
        spec = spec.doubled()
    raise PrecisionError(f"Urquiza Gramian quadrature did not converge (estimate {err:.3e} at {spec.panels // 2} panels)")


def urquiza_feedback(sys, omega, quad=DEFAULT_QUAD):
    """``K = -M_U^{-1} B^T G_omega^{-1}``; predicted rate ``2 omega - g(-A)``."""
    if not omega > 0:
        raise DomainError("urquiza feedback needs omega > 0")
    _require_controllable(sys, "urquiza")
    G, tau, spec = urquiza_gramian(sys, float(omega), quad)
    K = _gain_from_gramian(sys, G, "urquiza")
    g = growth_bound(-sys.A, sys.M_H)
    params = {"omega": float(omega), "growth_bound_minus_A": g, "truncation": tau, **_quad_params(spec)}
    return FeedbackLaw(K, "urquiza", 2.0 * omega - g, params)


def _bass_gain(A, B, R):
    """Stabilizing gain for a controllable pair via a shifted Gramian."""
    n = A.shape[0]
    beta = max(0.0, spectral_abscissa(-A)) + 1.0
    F = -(A + beta * np.eye(n)).T
    Z = solve_lyapunov(F, symmetrize(B @ np.linalg.solve(R, B.T)))
    return -np.linalg.solve(R, B.T) @ np.linalg.inv(Z)


def initial_stabilizing_gain(A, B, R):
    """Zero when ``A`` is Hurwitz, otherwise a shifted-Gramian gain on the
    controllable subspace."""
    m, n = B.shape[1], A.shape[0]
    if spectral_abscissa(A) < 0:
        return np.zeros((m, n))
    V = controllable_subspace(A, B)
    if V.shape[1] == 0:
        raise DomainError("system is not stabilizable: no controllable directions and A is not Hurwitz")
    K_c = _bass_gain(V.T @ A @ V, V.T @ B, R)
    K0 = K_c @ V.T
    if not spectral_abscissa(A + B @ K0) < 0:
        raise DomainError("system is not stabilizable: an uncontrollable mode is not strictly stable")
    return K0


def care_residual(A, B, Qw, R, P):
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Qw


def care_relative_residual(A, B, Qw, R, P):
    """Residual norm over the largest of the norms of its terms."""
    quad = P @ B @ np.linalg.solve(R, B.T @ P)
    scale = max(1.0, float(np.linalg.norm(Qw, 2)), 2.0 * float(np.linalg.norm(A.T @ P, 2)), float(np.linalg.norm(quad, 2)))
    return float(np.linalg.norm(A.T @ P + P @ A - quad + Qw, 2)) / scale


def solve_care(A, B, Qw, R, max_iter=50):
    """Stabilizing solution of ``A^T P + P A - P B R^{-1} B^T P + Qw = 0`` by
    Newton-Kleinman iteration."""
    K = initial_stabilizing_gain(A, B, R)
    prev = math.inf
    for _ in range(max_iter):
        P = solve_lyapunov(A + B @ K, symmetrize(Qw + K.T @ R @ K))
        K = -np.linalg.solve(R, B.T @ P)
        res = care_relative_residual(A, B, Qw, R, P)
        # stop at convergence or once round-off stops further progress
        if res <= 1e-13 or (res >= prev and res <= 1e-8):
            return P
        prev = res
    raise ConvergenceError(f"Newton-Kleinman iteration did not converge in {max_iter} steps (relative residual {res:.3e})")


def lqr_feedback(sys):
    """LQ regulator with state weight ``M_H`` and control weight ``M_U``."""
    if not analyze(sys).stabilizable:
        raise DomainError("LQR requires a stabilizable system")
    P = solve_care(sys.A, sys.B, sys.M_H, sys.M_U)
    K = -np.linalg.solve(sys.M_U, sys.B.T @ P) + 0.0
    rate = -spectral_abscissa(sys.A + sys.B @ K)
    return FeedbackLaw(K, "lqr", rate, {"riccati_residual": care_relative_residual(sys.A, sys.B, sys.M_H, sys.M_U, P)})


def zero_feedback(sys, rate=0.0):
    return FeedbackLaw(np.zeros((sys.m, sys.n)), "zero", float(rate))
