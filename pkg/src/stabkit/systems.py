"""Finite-dimensional realizations of ``x' = A x + B u``.

The state space ``H`` carries the inner product ``x^T M_H y`` and the control
space ``U`` carries ``u^T M_U v``.  Duals are paired with the plain bilinear
form, so adjoints are transposes and the Riesz maps are the inverse metrics:
``J_2 = M_H^{-1}`` on states and ``J_1 = M_U^{-1}`` on controls.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, InputError, ShapeError
from .numerics import NotSPD, as_mat, check_symmetric, chol_spd

PBH_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class SystemDef:
    A: np.ndarray
    B: np.ndarray
    M_H: np.ndarray = None
    M_U: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        A = as_mat(self.A, "A", square=True)
        B = as_mat(self.B, "B")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ShapeError(f"B: expected {n} rows to match A, got shape {B.shape}")
        m = B.shape[1]
        M_H = np.eye(n) if self.M_H is None else _metric(self.M_H, "M_H", n)
        M_U = np.eye(m) if self.M_U is None else _metric(self.M_U, "M_U", m)
        for name, val in (("A", A), ("B", B), ("M_H", M_H), ("M_U", M_U)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def J_H(self):
        """Riesz map ``H' -> H``, i.e. ``M_H^{-1}``."""
        return _inverse_spd(self.M_H)

    @property
    def J_U(self):
        """Riesz map ``U' -> U``, i.e. ``M_U^{-1}``."""
        return _inverse_spd(self.M_U)

    @property
    def control_gram(self):
        """``B M_U^{-1} B^T``, the integrand core of every Gramian here."""
        X = self.B @ self.J_U @ self.B.T
        return 0.5 * (X + X.T)

    def with_A(self, A):
        return replace(self, A=A)

    def to_dict(self):
        d = {"n": self.n, "m": self.m, "A": self.A.tolist(), "B": self.B.tolist()}
        if not np.array_equal(self.M_H, np.eye(self.n)):
            d["M_H"] = self.M_H.tolist()
        if not np.array_equal(self.M_U, np.eye(self.m)):
            d["M_U"] = self.M_U.tolist()
        if self.label:
            d["label"] = self.label
        return d


def _metric(M, name, size):
    M = check_symmetric(as_mat(M, name, square=True), name)
    if M.shape != (size, size):
        raise ShapeError(f"{name}: expected shape ({size}, {size}), got {M.shape}")
    L = chol_spd(M)
    if isinstance(L, NotSPD):
        raise DomainError(f"{name}: not positive definite (Cholesky pivot {L.pivot} failed)")
    return 0.5 * (M + M.T)


def _inverse_spd(M):
    Minv = np.linalg.inv(M)
    return 0.5 * (Minv + Minv.T)


# --------------------------------------------------------------------------
# JSON documents


def _reject_constant(token):
    raise InputError(f"non-finite token {token!r} is not allowed")


def load_system(document):
    """Parse a system JSON document (text or already-decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise InputError(f"system document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise InputError("system document must be a JSON object")
    for key in ("n", "m", "A", "B"):
        if key not in doc:
            raise InputError(f"system document is missing field {key!r}")
    n, m = doc["n"], doc["m"]
    if not (isinstance(n, int) and isinstance(m, int)) or n < 1 or m < 1:
        raise InputError("fields 'n' and 'm' must be positive integers")

    def field_mat(key, rows, cols):
        try:
            M = as_mat(doc[key], key)
        except (TypeError, ValueError) as exc:
            raise InputError(f"field {key!r}: {exc}") from exc
        if M.shape != (rows, cols):
            raise ShapeError(f"field {key!r}: expected shape ({rows}, {cols}), got {M.shape}")
        return M

    A = field_mat("A", n, n)
    B = field_mat("B", n, m)
    M_H = field_mat("M_H", n, n) if doc.get("M_H") is not None else None
    M_U = field_mat("M_U", m, m) if doc.get("M_U") is not None else None
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise InputError("field 'label' must be a string")
    return SystemDef(A, B, M_H, M_U, label)


def dump_system(sys):
    return json.dumps(sys.to_dict(), indent=2, allow_nan=False)


# --------------------------------------------------------------------------
# example generators


def _scalar_unstable(a=1.0):
    return SystemDef([[float(a)]], [[1.0]], label=f"scalar-unstable(a={a:g})")


def _stable_diagonal(rates=(1.0, 2.0)):
    rates = [float(r) for r in rates]
    if not rates or min(rates) <= 0:
        raise DomainError("stable-diagonal needs positive rates")
    n = len(rates)
    return SystemDef(-np.diag(rates), np.zeros((n, 1)), label="stable-diagonal")


def _transport_1d(n=16, speed=1.0, window=(0, 4), length=1.0):
    """Periodic upwind advection; control drives the indicator of a window."""
    n = int(n)
    start, width = int(window[0]), int(window[1])
    if n < 2 or speed <= 0:
        raise DomainError("transport-1d needs n >= 2 and speed > 0")
    if width < 1 or start < 0 or start + width > n:
        raise DomainError(f"control window ({start}, {width}) does not fit in {n} cells")
    h = length / n
    A = (speed / h) * (np.roll(np.eye(n), 1, axis=0) - np.eye(n))
    B = np.zeros((n, 1))
    B[start : start + width, 0] = 1.0
    return SystemDef(A, B, label=f"transport-1d(n={n},window={start}:{width})")


def _wave_chain(masses=3, damping=0.1, stiffness=1.0):
    """Fixed-free spring-mass chain, force on the first mass."""
    k = int(masses)
    if k < 1 or damping < 0 or stiffness <= 0:
        raise DomainError("wave-chain needs masses >= 1, damping >= 0, stiffness > 0")
    Ks = 2.0 * np.eye(k) - np.eye(k, k=1) - np.eye(k, k=-1)
    Ks[-1, -1] = 1.0
    Ks *= stiffness
    A = np.block([[np.zeros((k, k)), np.eye(k)], [-Ks, -damping * np.eye(k)]])
    B = np.zeros((2 * k, 1))
    B[k, 0] = 1.0
    return SystemDef(A, B, label=f"wave-chain(k={k})")


def _rand_stabilizable(n=6, m=2, n_unc=2, margin=0.8, seed=0):
    """Controllable block with unstable modes plus an uncontrollable block
    whose slowest eigenvalue sits at ``-margin``, rotated by a random
    orthogonal similarity.

    Controllable eigenvalues are stratified over ``+-[0.1, 0.6]`` so that no
    two are close; near-coincident modes make the pair nearly uncontrollable
    and every downstream constant ill-conditioned.
    """
    n, m, n_unc = int(n), int(m), int(n_unc)
    if not margin > 0:
        raise DomainError("margin must be positive")
    if m < 1 or n_unc < 0 or n_unc >= n:
        raise DomainError("need m >= 1 and 0 <= n_unc < n")
    rng = np.random.default_rng(seed)
    nc = n - n_unc
    unc = -margin - np.concatenate([[0.0], np.sort(rng.uniform(0.0, 0.1, max(n_unc - 1, 0)))])[:n_unc]
    n_unstable = max(1, nc // 2)

    def stratified(k):
        return 0.1 + 0.5 * (np.arange(k) + rng.uniform(0.25, 0.75, k)) / max(k, 1)

    for _ in range(100):
        ctrl = np.concatenate([stratified(n_unstable), -stratified(nc - n_unstable)])
        if unc.size == 0 or np.min(np.abs(ctrl[:, None] - unc[None, :])) > 0.05:
            break
    else:
        raise DomainError(f"could not separate controllable modes from the margin {margin}")
    P = np.eye(nc) + 0.3 * rng.standard_normal((nc, nc)) / math.sqrt(nc)
    Ac = P @ np.diag(ctrl) @ np.linalg.inv(P)
    Au = np.diag(unc) + np.triu(0.1 * rng.standard_normal((n_unc, n_unc)), k=1)
    A = np.zeros((n, n))
    A[:nc, :nc] = Ac
    A[nc:, nc:] = Au
    # modal input weights bounded away from zero keep every mode reachable
    Bm = rng.standard_normal((nc, m))
    Bm[:, 0] = rng.choice([-1.0, 1.0], nc) * rng.uniform(0.5, 1.5, nc)
    B = np.zeros((n, m))
    B[:nc] = P @ Bm
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    return SystemDef(Q @ A @ Q.T, Q @ B, label=f"rand-stabilizable(n={n},m={m},n_unc={n_unc},seed={seed})")


EXAMPLES = {
    "scalar-unstable": _scalar_unstable,
    "stable-diagonal": _stable_diagonal,
    "transport-1d": _transport_1d,
    "wave-chain": _wave_chain,
    "rand-stabilizable": _rand_stabilizable,
}


def make_example(name, **params):
    """Build one of the named example systems.

    >>> make_example("scalar-unstable", a=1.0).A
    array([[1.]])
    """
    try:
        factory = EXAMPLES[name]
    except KeyError:
        raise DomainError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise DomainError(f"{name}: {exc}") from exc


# --------------------------------------------------------------------------
# controllability analysis


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    uncontrollable_modes: tuple = field(default_factory=tuple)
    omega_star: float = math.inf

    @property
    def stabilizable(self):
        return self.omega_star > 0

    def to_dict(self):
        return {
            "controllable": self.controllable,
            "uncontrollable_modes": [list(mode) for mode in self.uncontrollable_modes],
            "omega_star": "inf" if math.isinf(self.omega_star) else self.omega_star,
        }


def analyze(sys):
    """PBH test at every eigenvalue of ``A``; best achievable decay rate."""
    A, B, n = sys.A, sys.B, sys.n
    tol = PBH_RTOL * np.linalg.norm(A, 2)
    modes = []
    for lam in np.linalg.eigvals(A):
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        sv = np.linalg.svd(pencil, compute_uv=False)
        defect = n - int(np.sum(sv > tol))
        if defect > 0:
            modes.append((float(lam.real), float(lam.imag), defect))
    modes.sort()
    omega_star = min(-re for re, _, _ in modes) if modes else math.inf
    return ControllabilityReport(not modes, tuple(modes), omega_star)


def controllable_subspace(A, B, rtol=PBH_RTOL):
    """Orthonormal basis of the reachable subspace via block Krylov
    iteration with re-orthogonalization."""
    n = A.shape[0]
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2), 1.0)
    basis = np.zeros((n, 0))
    block = B.copy()
    for _ in range(n):
        for _ in range(2):
            block = block - basis @ (basis.T @ block)
        if block.size == 0:
            break
        U, s, _ = np.linalg.svd(block, full_matrices=False)
        keep = s > rtol * scale
        if not keep.any():
            break
        new = U[:, keep]
        basis = np.hstack([basis, new])
        if basis.shape[1] >= n:
            break
        block = A @ new
    return basis
