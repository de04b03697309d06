"""Symmetric order-6 tensor algebra in 3D.

A tensor is stored as its 28 unique monomial components T_{abc} with
a+b+c = 6, ordered lexicographically descending by a, then b:
(6,0,0), (5,1,0), (5,0,1), (4,2,0), ... , (0,0,6).  Multinomial weights
are *not* folded into storage; they enter in evaluation and in the
apolar (Bombieri) inner product, under which <u^o6, w^o6> = <u,w>^6.
"""

from math import factorial

import numpy as np

from .errors import ContractError

ORDER = 6
NUM_COEFFS = 28


def _make_exponents():
    exps = []
    for a in range(ORDER, -1, -1):
        for b in range(ORDER - a, -1, -1):
            exps.append((a, b, ORDER - a - b))
    return np.array(exps, dtype=np.int64)


EXPONENTS = _make_exponents()
MULTINOMIAL = np.array(
    [factorial(ORDER) // (factorial(a) * factorial(b) * factorial(c))
     for a, b, c in EXPONENTS], dtype=float)

# Per-axis lowered exponents for gradient evaluation.
_GRAD_COEF = EXPONENTS.astype(float)                       # (28, 3)
_GRAD_EXPS = np.maximum(EXPONENTS[:, None, :].copy(), 0)   # placeholder
_GRAD_EXPS = np.stack([EXPONENTS - np.eye(3, dtype=np.int64)[d]
                       for d in range(3)], axis=0)
_GRAD_EXPS = np.maximum(_GRAD_EXPS, 0)                     # (3, 28, 3)


def check_unit(v, tol=1e-9):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise ContractError("direction must be a unit vector, |v| = %g"
                            % np.linalg.norm(v))
    return v


def check_rotation(R, tol=1e-12):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ContractError("rotation must be a 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > max(tol, 1e-9):
        raise ContractError("rotation matrix is not orthogonal")
    if abs(np.linalg.det(R) - 1.0) > max(tol, 1e-9):
        raise ContractError("rotation matrix must have det = +1")
    return R


def _power_table(v):
    """v: (..., 3) -> (..., 3, ORDER+1) table of v_d**k."""
    v = np.asarray(v, dtype=float)
    pows = np.empty(v.shape + (ORDER + 1,))
    pows[..., 0] = 1.0
    for k in range(1, ORDER + 1):
        pows[..., k] = pows[..., k - 1] * v
    return pows


def monomials(v):
    """All 28 degree-6 monomials v^a v^b v^c for v of shape (..., 3)."""
    pows = _power_table(v)
    return (pows[..., 0, EXPONENTS[:, 0]]
            * pows[..., 1, EXPONENTS[:, 1]]
            * pows[..., 2, EXPONENTS[:, 2]])


def eval_poly(T, v):
    """Evaluate the homogeneous degree-6 form T(v, ..., v) at unit v."""
    v = check_unit(v)
    return float(np.dot(MULTINOMIAL * np.asarray(T, dtype=float), monomials(v)))


def eval_many(T, dirs):
    """Evaluate T at a batch of directions, shape (..., 3), no unit check."""
    return monomials(dirs) @ (MULTINOMIAL * np.asarray(T, dtype=float))


def rank1(alpha, v):
    """Rank-1 tensor alpha * v^{o6}; stored components are alpha * v^abc."""
    if alpha < 0:
        raise ContractError("rank-1 weight must be nonnegative")
    v = check_unit(v)
    return alpha * monomials(v)


def apolar_dot(A, B):
    """Apolar inner product: sum of multinomial-weighted component products."""
    return float(np.dot(MULTINOMIAL * np.asarray(A, dtype=float),
                        np.asarray(B, dtype=float)))


def apolar_norm(A):
    return np.sqrt(max(apolar_dot(A, A), 0.0))


def poly_grad(T, v):
    """Gradient of v -> sum_abc w_abc T_abc v^abc (not restricted to S^2)."""
    T = np.asarray(T, dtype=float)
    pows = _power_table(v)
    wT = MULTINOMIAL * T
    g = np.empty(np.shape(v)[:-1] + (3,))
    for d in range(3):
        ex = _GRAD_EXPS[d]
        term = (pows[..., 0, ex[:, 0]]
                * pows[..., 1, ex[:, 1]]
                * pows[..., 2, ex[:, 2]])
        g[..., d] = term @ (wT * _GRAD_COEF[:, d])
    return g


def _rotation_nodes():
    """28 well-spread hemisphere directions for exact degree-6 re-expansion."""
    n = NUM_COEFFS
    i = np.arange(n)
    z = (i + 0.5) / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


_NODES = _rotation_nodes()
# V[k, j] = w_j * nodes_k^{exps_j}; evaluation at 28 independent directions
# determines a degree-6 form uniquely, so V is invertible and the
# re-expansion below is exact (no quadrature involved).
_V = monomials(_NODES) * MULTINOMIAL
_VINV = np.linalg.inv(_V)


def rotate_tensor(T, R):
    """Return T' with T'(v) = T(R^T v), i.e. T rotated by R."""
    R = check_rotation(R)
    u = _NODES @ R            # rows are R^T nodes_k
    evals = monomials(u) @ (MULTINOMIAL * np.asarray(T, dtype=float))
    return _VINV @ evals


def rotate_many(Ts, Rs):
    """Rotate a batch: Ts (n, 28) by Rs (n, 3, 3)."""
    Ts = np.asarray(Ts, dtype=float)
    Rs = np.asarray(Rs, dtype=float)
    u = np.einsum('kj,nji->nki', _NODES, Rs)
    mono = monomials(u)                       # (n, 28, 28)
    evals = np.einsum('nkj,nj->nk', mono, Ts * MULTINOMIAL)
    return evals @ _VINV.T
