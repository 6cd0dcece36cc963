"""The weighted Gramian ``Pi`` and its companions ``Lambda(t)``, ``Q`` and ``P``.

With ``c = D_alpha e^{alpha T}``, ``r = alpha - eps``, ``X = B M_U^{-1} B^T`` and
``N = M_H^{-1}``::

    Lambda(t) = c int_0^t e^{-r s} Phi(s) ds + C_alpha e^{-r t} Psi(t)
    Phi(s)    = exp(-A s) X exp(-A^T s)
    Psi(t)    = exp(-A t) N exp(-A^T t)

Writing ``Ahat = -A - (r/2) I`` turns both weighted integrands into plain
congruences ``exp(Ahat s) Y exp(Ahat s)^T``, so one stack of exponentials at
the quadrature nodes serves every term.  ``Pi`` is the integral of
``Lambda`` over ``[0, T]``; swapping the order of integration collapses the
inner integral to the kernel ``(T - s)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, InternalPositivityViolation
from .numerics import DEFAULT_QUAD, NotSPD, chol_spd, combine_samples, expm, expm_nodes, paired_rule, symmetrize
from .observability import ObservabilityCertificate

ADMISSIBLE_RTOL = 1e-12


def _check_params(cert, eps, T):
    if not (math.isfinite(T) and T > 0):
        raise DomainError(f"T must be positive, got {T}")
    if not 0 <= eps < cert.alpha:
        raise DomainError(f"eps must lie in [0, alpha) = [0, {cert.alpha:g}), got {eps}")


def _shifted(sys, cert, eps):
    return -sys.A - 0.5 * (cert.alpha - eps) * np.eye(sys.n)


def gain_scale(cert, T):
    """``T D_alpha e^{alpha T}``, the factor in front of the gain."""
    return T * cert.D_alpha * math.exp(cert.alpha * T)


def lambda_slice(sys, cert, eps, T, t, quad=DEFAULT_QUAD):
    """``Lambda(t)`` for ``0 <= t <= T``."""
    _check_params(cert, eps, T)
    if not 0 <= t <= T:
        raise DomainError(f"slice time must lie in [0, T] = [0, {T:g}], got {t}")
    M = _shifted(sys, cert, eps)
    E_t = expm(M, t)
    tail = symmetrize(cert.C_alpha * (E_t @ sys.J_H @ E_t.T))
    if cert.D_alpha == 0.0 or t == 0.0:
        return tail
    nodes, wc, wf = paired_rule(0.0, t, quad)
    F = _kernels.congruence_stack(expm_nodes(M, nodes), np.ascontiguousarray(sys.control_gram))
    head, _ = combine_samples(F, wc, wf)
    return symmetrize(cert.D_alpha * math.exp(cert.alpha * T) * head + tail)


def lambda_grid(sys, cert, eps, T, grid=20, quad=DEFAULT_QUAD):
    """``Lambda(t)`` on ``grid`` equally spaced points of ``[0, T]``.

    The integral term is accumulated interval by interval, each interval
    taking its share of ``quad.panels``, so the cost is that of a single
    slice at ``t = T``.
    """
    _check_params(cert, eps, T)
    ts = np.linspace(0.0, T, int(grid))
    M = _shifted(sys, cert, eps)
    X = np.ascontiguousarray(sys.control_gram)
    N = sys.J_H
    c = cert.D_alpha * math.exp(cert.alpha * T)
    sub = quad.with_panels(max(4, -(-quad.panels // max(len(ts) - 1, 1))))
    tails = expm_nodes(M, ts)
    head = np.zeros_like(N)
    out = []
    for k, t in enumerate(ts):
        if k and c != 0.0:
            nodes, wc, wf = paired_rule(ts[k - 1], t, sub)
            piece, _ = combine_samples(_kernels.congruence_stack(expm_nodes(M, nodes), X), wc, wf)
            head = head + piece
        E = tails[k]
        out.append((float(t), symmetrize(c * head + cert.C_alpha * (E @ N @ E.T))))
    return out


@dataclass(frozen=True, eq=False)
class GramianBundle:
    alpha: float
    eps: float
    T: float
    Lambda_T: np.ndarray
    Pi: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    quad_error: float
    cert: ObservabilityCertificate
    quad: object = DEFAULT_QUAD

    @property
    def rate(self):
        return 0.5 * (self.alpha - self.eps)


def pi_integral(sys, cert, eps, T, quad=DEFAULT_QUAD):
    """Assemble ``Lambda(T)``, ``Pi``, ``Q`` and ``P`` in one quadrature pass.

    ``quad_error`` is the entrywise panel-doubling estimate for ``Pi``
    relative to ``max |Pi|``.

    Raises
    ------
    InternalPositivityViolation
        If ``Pi`` is not positive definite, which cannot happen for a valid
        certificate and adequate quadrature.
    """
    _check_params(cert, eps, T)
    n = sys.n
    N = sys.J_H
    M = _shifted(sys, cert, eps)
    nodes, wc, wf = paired_rule(0.0, T, quad)
    E = expm_nodes(M, nodes)
    c = cert.D_alpha * math.exp(cert.alpha * T)

    tail_stack = _kernels.congruence_stack(E, np.ascontiguousarray(N))
    tail_int, tail_err = combine_samples(tail_stack, wc, wf)
    Pi = cert.C_alpha * tail_int
    err = cert.C_alpha * tail_err
    Lambda_T = cert.C_alpha * tail_stack[-1]
    if c != 0.0:
        head_stack = _kernels.congruence_stack(E, np.ascontiguousarray(sys.control_gram))
        head, _ = combine_samples(head_stack, wc, wf)
        kern = T - nodes
        head_k, head_err = combine_samples(head_stack, wc * kern, wf * kern)
        Pi = Pi + c * head_k
        err += c * head_err
        Lambda_T = Lambda_T + c * head
    Pi = symmetrize(Pi)
    Lambda_T = symmetrize(Lambda_T)
    if isinstance(chol_spd(Pi), NotSPD):
        raise InternalPositivityViolation(
            "Pi is not positive definite; the certificate is invalid for this system or the quadrature is too coarse"
        )
    Q = symmetrize(Lambda_T - cert.C_alpha * N)
    P = (cert.alpha - eps) * np.eye(n) + np.linalg.solve(Pi, Q)
    scale = float(np.max(np.abs(Pi)))
    return GramianBundle(
        float(cert.alpha), float(eps), float(T), Lambda_T, Pi, Q, P, err / max(scale, 1e-300), cert, quad
    )


def q_operator(bundle):
    """``Q = Lambda(T) - C_alpha M_H^{-1}``."""
    return bundle.Q


@dataclass(frozen=True)
class Admissibility:
    status: str  # "ok" | "eps-T-violation" | "outside-window"
    eps_hat: float
    in_window: bool
    reason: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def admissible(cert, eps, T):
    """Classify ``(eps, T)`` against the admissibility rule.

    For ``C_alpha > 1`` the rule is ``0 < eps < alpha`` and
    ``T >= ln(C_alpha)/eps``; for ``C_alpha = 1`` it is ``0 <= eps < alpha``
    and ``T > 0``.  The window for ``T`` is ``(ln(C_alpha)/alpha, inf)`` and
    ``eps_hat = ln(C_alpha)/T`` is the smallest admissible ``eps`` at ``T``.
    """
    alpha, C = cert.alpha, cert.C_alpha
    logC = math.log(C)
    eps_hat = logC / T if T > 0 else math.inf
    in_window = T > logC / alpha
    if not T > 0:
        return Admissibility("outside-window", eps_hat, False, f"T = {T:g} must be positive")
    if not in_window:
        return Admissibility(
            "outside-window",
            eps_hat,
            False,
            f"T = {T:g} is outside the window (ln C/alpha, inf) = ({logC / alpha:.6g}, inf)",
        )
    if C > 1.0:
        if not 0 < eps < alpha:
            return Admissibility(
                "eps-T-violation", eps_hat, True, f"C_alpha > 1 requires eps in (0, alpha) = (0, {alpha:g}); got {eps:g}"
            )
        if T < (1.0 - ADMISSIBLE_RTOL) * logC / eps:
            return Admissibility(
                "eps-T-violation",
                eps_hat,
                True,
                f"C_alpha > 1 requires T >= ln(C_alpha)/eps = {logC / eps:.6g}; got T = {T:g}",
            )
    elif not 0 <= eps < alpha:
        return Admissibility(
            "eps-T-violation", eps_hat, True, f"C_alpha = 1 requires eps in [0, alpha) = [0, {alpha:g}); got {eps:g}"
        )
    return Admissibility("ok", eps_hat, True)
