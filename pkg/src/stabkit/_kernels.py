"""Hot inner loops: Pade matrix exponentials, exponential stacks at quadrature
nodes, congruence stacks and a pivot-reporting Cholesky.

Every kernel has two implementations with identical signatures.  The
``*_loop`` versions are written in the restricted subset numba compiles; the
``*_vec`` versions are batched numpy.  :data:`expm`, :data:`expm_stack`,
:data:`congruence_stack` and :data:`cholesky` are bound to one family at
import time according to :mod:`stabkit._accel`.
"""

import math

import numpy as np

from . import _accel

# Pade(13) numerator coefficients and the 1-norm bound below which no scaling
# is needed for double precision accuracy.
PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
THETA13 = 5.371920351148152


def _squarings(norm1):
    if norm1 <= THETA13 or norm1 == 0.0:
        return 0
    return max(0, int(math.ceil(math.log2(norm1 / THETA13))))


# --------------------------------------------------------------------------
# loop implementations (numba-compatible)


def _norm1_loop(A):
    n = A.shape[0]
    best = 0.0
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += abs(A[i, j])
        if s > best:
            best = s
    return best


def _matmul_loop(A, B):
    n = A.shape[0]
    m = B.shape[1]
    C = np.zeros((n, m))
    for i in range(n):
        for k in range(A.shape[1]):
            a = A[i, k]
            if a != 0.0:
                for j in range(m):
                    C[i, j] += a * B[k, j]
    return C


def _solve_loop(M, R):
    """Gaussian elimination with partial pivoting, solving M X = R."""
    n = M.shape[0]
    m = R.shape[1]
    A = M.copy()
    X = R.copy()
    for col in range(n):
        piv = col
        best = abs(A[col, col])
        for r in range(col + 1, n):
            v = abs(A[r, col])
            if v > best:
                best = v
                piv = r
        if best == 0.0:
            raise ZeroDivisionError("singular Pade denominator")
        if piv != col:
            for j in range(n):
                tmp = A[col, j]
                A[col, j] = A[piv, j]
                A[piv, j] = tmp
            for j in range(m):
                tmp = X[col, j]
                X[col, j] = X[piv, j]
                X[piv, j] = tmp
        d = A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] / d
            if f != 0.0:
                for j in range(col, n):
                    A[r, j] -= f * A[col, j]
                for j in range(m):
                    X[r, j] -= f * X[col, j]
    for col in range(n - 1, -1, -1):
        d = A[col, col]
        for j in range(m):
            s = X[col, j]
            for k in range(col + 1, n):
                s -= A[col, k] * X[k, j]
            X[col, j] = s / d
    return X


def _pade13_loop(A, b):
    n = A.shape[0]
    A2 = _matmul_loop(A, A)
    A4 = _matmul_loop(A2, A2)
    A6 = _matmul_loop(A2, A4)
    W1 = b[13] * A6 + b[11] * A4 + b[9] * A2
    Z1 = b[12] * A6 + b[10] * A4 + b[8] * A2
    W2 = _matmul_loop(A6, W1) + b[7] * A6 + b[5] * A4 + b[3] * A2
    V = _matmul_loop(A6, Z1) + b[6] * A6 + b[4] * A4 + b[2] * A2
    for i in range(n):
        W2[i, i] += b[1]
        V[i, i] += b[0]
    U = _matmul_loop(A, W2)
    return _solve_loop(V - U, V + U)


def expm_loop(A):
    A = np.ascontiguousarray(A)
    norm1 = _norm1_loop(A)
    s = 0
    if norm1 > THETA13:
        s = int(math.ceil(math.log2(norm1 / THETA13)))
        if s < 0:
            s = 0
    R = _pade13_loop(A / (2.0**s), PADE13)
    for _ in range(s):
        R = _matmul_loop(R, R)
    return R


def expm_stack_loop(M, ts):
    n = M.shape[0]
    k = ts.shape[0]
    out = np.empty((k, n, n))
    for i in range(k):
        out[i] = expm_loop(M * ts[i])
    return out


def congruence_stack_loop(E, X):
    k, n, _ = E.shape
    out = np.empty((k, n, n))
    for i in range(k):
        Ei = np.ascontiguousarray(E[i])
        Y = _matmul_loop(_matmul_loop(Ei, X), Ei.T.copy())
        for r in range(n):
            for c in range(r, n):
                v = 0.5 * (Y[r, c] + Y[c, r])
                out[i, r, c] = v
                out[i, c, r] = v
    return out


def cholesky_loop(M):
    """Return ``(L, pivot)``; ``pivot`` is 0 on success, else the 1-based
    index of the first non-positive pivot."""
    n = M.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = M[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return L, j + 1
        ljj = math.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    return L, 0


# --------------------------------------------------------------------------
# batched numpy implementations


def _pade13_vec(A):
    b = PADE13
    n = A.shape[-1]
    ident = np.broadcast_to(np.eye(n), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    return np.linalg.solve(V - U, V + U)


def expm_stack_vec(M, ts):
    ts = np.asarray(ts, dtype=float)
    A = ts[:, None, None] * M[None, :, :]
    norms = np.abs(A).sum(axis=1).max(axis=1)
    s = np.array([_squarings(v) for v in norms], dtype=int)
    A = A / np.ldexp(1.0, s)[:, None, None]
    R = _pade13_vec(A)
    for j in range(int(s.max(initial=0))):
        idx = np.nonzero(s > j)[0]
        R[idx] = R[idx] @ R[idx]
    return R


def expm_vec(A):
    return expm_stack_vec(np.asarray(A, dtype=float), np.ones(1))[0]


def congruence_stack_vec(E, X):
    Y = E @ X @ np.swapaxes(E, 1, 2)
    return 0.5 * (Y + np.swapaxes(Y, 1, 2))


def cholesky_vec(M):
    n = M.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return L, j + 1
        L[j, j] = math.sqrt(d)
        L[j + 1 :, j] = (M[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L, 0


NUMPY_KERNELS = {
    "expm": expm_vec,
    "expm_stack": expm_stack_vec,
    "congruence_stack": congruence_stack_vec,
    "cholesky": cholesky_vec,
}

_numba_cache = {}


def numba_kernels():
    """Compiled kernel table; compiles on first use."""
    if not _numba_cache:
        global _norm1_loop, _matmul_loop, _solve_loop, _pade13_loop, expm_loop
        _norm1_loop = _accel.njit(_norm1_loop)
        _matmul_loop = _accel.njit(_matmul_loop)
        _solve_loop = _accel.njit(_solve_loop)
        _pade13_loop = _accel.njit(_pade13_loop)
        expm_loop = _accel.njit(expm_loop)
        _numba_cache.update(
            expm=expm_loop,
            expm_stack=_accel.njit(expm_stack_loop),
            congruence_stack=_accel.njit(congruence_stack_loop),
            cholesky=_accel.njit(cholesky_loop),
        )
    return _numba_cache


_active = numba_kernels() if _accel.USE_NUMBA else NUMPY_KERNELS

expm = _active["expm"]
expm_stack = _active["expm_stack"]
congruence_stack = _active["congruence_stack"]
cholesky = _active["cholesky"]
BACKEND = _accel.BACKEND
