"""Independent checks of synthesized objects.

Every verdict compares a measured quantity with one entry of
:class:`Tolerances`; nothing is tuned per call site.  Positivity margins are
smallest generalized eigenvalues against the dual metric ``N = M_H^{-1}``,
divided by the size of the operator being tested so that round-off on large
Gramians does not read as a violation.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InputError
from .gramian import gain_scale, lambda_grid
from .numerics import expm_nodes, metric_norm, solve_lyapunov, spectral_abscissa, sym_pencil_extremes, symmetrize


@dataclass(frozen=True)
class Tolerances:
    psd_margin: float = -1e-7
    lyapunov: float = 1e-6
    riccati_factor: float = 10.0
    decay_slack: float = 0.05
    energy: float = 1e-6
    certificate_margin: float = -1e-7

    @classmethod
    def from_env(cls, environ=None):
        """Defaults overridden by the JSON object in ``STABKIT_TOL``."""
        raw = (os.environ if environ is None else environ).get("STABKIT_TOL", "").strip()
        if not raw:
            return cls()
        try:
            override = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"STABKIT_TOL is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        if not isinstance(override, dict) or not set(override) <= known:
            raise InputError(f"STABKIT_TOL must be an object with keys from {sorted(known)}")
        return replace(cls(), **{k: float(v) for k, v in override.items()})


def _norm(M):
    return float(np.linalg.norm(M, 2))


def _margin(S, N, scale_form):
    lo, _ = sym_pencil_extremes(symmetrize(S), N)
    _, hi = sym_pencil_extremes(symmetrize(scale_form), N)
    return lo / max(1.0, abs(hi))


# --------------------------------------------------------------------------
# identities


def lyapunov_residual(sys, bundle):
    """Relative residual of
    ``A Pi + Pi A^T + (alpha - eps) Pi + Q - T D e^{alpha T} X = 0``."""
    A, Pi = sys.A, bundle.Pi
    AP = A @ Pi
    R = AP + AP.T + (bundle.alpha - bundle.eps) * Pi + bundle.Q - gain_scale(bundle.cert, bundle.T) * sys.control_gram
    return _norm(R) / max(_norm(AP), _norm(bundle.Q), 1.0)


def riccati_residual(sys, bundle):
    """Relative residual of the quadratic identity for ``Y = Pi^{-1}``::

        Y A + A^T Y - T D e^{alpha T} Y X Y + (alpha - eps) Y + Y Q Y = 0
    """
    A = sys.A
    Y = symmetrize(np.linalg.inv(bundle.Pi))
    YA = Y @ A
    YQY = Y @ bundle.Q @ Y
    R = YA + YA.T - gain_scale(bundle.cert, bundle.T) * (Y @ sys.control_gram @ Y) + (bundle.alpha - bundle.eps) * Y + YQY
    return _norm(R) / max(_norm(YA), _norm(YQY), 1.0)


# --------------------------------------------------------------------------
# positivity


def positivity_report(sys, bundle, grid=20):
    """Margins of the lower bounds on ``Lambda(t)`` and ``Pi``, of ``Q`` and
    of both sides of the bound sandwiching ``Pi^{-1}``.

    The lower sandwich constant is the measured top eigenvalue ``c_top`` of
    ``(Pi, N)``, giving ``Pi^{-1} >= M_H / c_top``.
    """
    if int(grid) < 2:
        raise InputError("positivity grid needs at least 2 points")
    N, M_H = sys.J_H, sys.M_H
    T, eps = bundle.T, bundle.eps
    lam = [_margin(L - math.exp(eps * t) * N, N, L) for t, L in lambda_grid(sys, bundle.cert, eps, T, grid, bundle.quad)]
    Pi = bundle.Pi
    Y = symmetrize(np.linalg.inv(Pi))
    _, c_top = sym_pencil_extremes(Pi, N)
    lo_upper, hi_upper = sym_pencil_extremes(M_H / T - Y, M_H)
    lo_lower, _ = sym_pencil_extremes(Y - M_H / c_top, M_H)
    _, y_top = sym_pencil_extremes(Y, M_H)
    return {
        "lambda_grid_min": float(min(lam)),
        "pi_lower": _margin(Pi - T * N, N, Pi),
        "q": _margin(bundle.Q, N, bundle.Lambda_T),
        "sandwich_upper": lo_upper / max(1.0, 1.0 / T),
        "sandwich_lower": lo_lower / max(1.0, y_top),
        "sandwich_constant": math.sqrt(T * c_top),
    }


# --------------------------------------------------------------------------
# decay


def default_horizon(abscissa):
    return 40.0 / abs(abscissa) if abscissa < 0 else 10.0


def closed_loop_report(sys, law, horizon=None, samples=200, tol=None):
    """Spectral abscissa of ``A + B K`` and the decay rate fitted to
    ``ln |exp((A + B K) t)|`` over the second half of the horizon."""
    tol = Tolerances() if tol is None else tol
    if int(samples) < 10:
        raise InputError("closed-loop report needs at least 10 samples")
    A_cl = law.closed_loop(sys)
    abscissa = spectral_abscissa(A_cl)
    H = default_horizon(abscissa) if horizon is None else float(horizon)
    if not H > 0:
        raise InputError("horizon must be positive")
    ts = np.linspace(0.5 * H, H, int(samples))
    with np.errstate(over="ignore", invalid="ignore"):
        E = expm_nodes(A_cl, ts)
        finite = bool(np.all(np.isfinite(E)))
        if finite:
            logs = np.array([math.log(metric_norm(Ek, sys.M_H)) for Ek in E])
            fitted = -float(np.polyfit(ts, logs, 1)[0])
        else:
            fitted = -math.inf
    predicted = float(law.predicted_rate)
    passed = finite and fitted >= predicted - tol.decay_slack and abscissa <= -predicted + tol.decay_slack
    return {
        "spectral_abscissa": abscissa,
        "fitted_rate": fitted if finite else None,
        "fit_interval": [0.5 * H, H],
        "predicted_rate": predicted,
        "passed": passed,
    }


def energy_monotonicity(sys, law, bundle, x0_count=8, horizon=None, seed=0, tol=None):
    """Largest violation of the two trajectory bounds.

    ``V(t) = x^T Pi^{-1} x`` must satisfy ``e^{(alpha-eps) t} V(t) <= V(0)``
    and the control energy ``int_0^inf |K x|^2 dt`` must stay below
    ``D_alpha e^{alpha T} |x0|^2``.  The energy integral is the exact
    infinite-horizon value from a Lyapunov solve.
    """
    tol = Tolerances() if tol is None else tol
    rng = np.random.default_rng(seed)
    n = sys.n
    rate = bundle.alpha - bundle.eps
    H = 10.0 / rate if horizon is None else float(horizon)
    ts = np.linspace(0.0, H, 100)
    A_cl = law.closed_loop(sys)
    E = expm_nodes(A_cl, ts)
    Y = symmetrize(np.linalg.inv(bundle.Pi))
    K = law.K
    energy_form = solve_lyapunov(A_cl, symmetrize(K.T @ sys.M_U @ K))
    bound_scale = bundle.cert.D_alpha * math.exp(bundle.alpha * bundle.T)
    decay_worst = -math.inf
    energy_worst = -math.inf
    for _ in range(int(x0_count)):
        x0 = rng.standard_normal(n)
        x0 /= math.sqrt(x0 @ sys.M_H @ x0)
        X = E @ x0
        V = np.einsum("ki,ij,kj->k", X, Y, X)
        decay_worst = max(decay_worst, float(np.max(np.exp(rate * ts) * V / V[0] - 1.0)))
        energy = float(x0 @ energy_form @ x0)
        energy_worst = max(energy_worst, energy - bound_scale if bound_scale == 0 else energy / bound_scale - 1.0)
    return {
        "decay_max_violation": decay_worst,
        "energy_max_violation": energy_worst,
        "max_violation": max(decay_worst, energy_worst),
        "passed": decay_worst <= tol.energy and energy_worst <= tol.energy,
    }


# --------------------------------------------------------------------------
# aggregate report


@dataclass
class VerificationReport:
    decay: dict
    lyapunov_residual: float = None
    riccati_residual: float = None
    positivity_margins: dict = None
    energy: dict = None
    verdicts: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["passed"] = self.passed
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)


def verify_law(sys, law, bundle=None, tol=None, grid=20, horizon=None, seed=0):
    """Run every applicable check on ``law``.

    Identity, positivity and energy checks need the Gramian bundle and apply
    only to the mutated-Gramian family.  ``Q >= 0`` is only required when
    ``(eps, T)`` is admissible.
    """
    from .gramian import admissible

    tol = Tolerances.from_env() if tol is None else tol
    bundle = law.bundle if bundle is None else bundle
    decay = closed_loop_report(sys, law, horizon=horizon, tol=tol)
    report = VerificationReport(decay)
    report.verdicts["decay"] = decay["passed"]
    if bundle is None:
        return report
    lyap = lyapunov_residual(sys, bundle)
    ric = riccati_residual(sys, bundle)
    cond = float(np.linalg.cond(bundle.Pi))
    pos = positivity_report(sys, bundle, grid)
    en = energy_monotonicity(sys, law, bundle, seed=seed, tol=tol)
    report.lyapunov_residual = lyap
    report.riccati_residual = ric
    report.positivity_margins = pos
    report.energy = en
    report.verdicts["lyapunov"] = lyap <= tol.lyapunov
    report.verdicts["riccati"] = ric <= tol.riccati_factor * cond**2 * max(lyap, np.finfo(float).eps)
    report.verdicts["lambda_lower"] = pos["lambda_grid_min"] >= tol.psd_margin
    report.verdicts["pi_lower"] = pos["pi_lower"] >= tol.psd_margin
    if admissible(bundle.cert, bundle.eps, bundle.T).ok:
        report.verdicts["q_nonnegative"] = pos["q"] >= tol.psd_margin
    report.verdicts["sandwich_upper"] = pos["sandwich_upper"] >= tol.psd_margin
    report.verdicts["sandwich_lower"] = pos["sandwich_lower"] >= tol.psd_margin
    report.verdicts["energy"] = en["passed"]
    return report
