"""Low-rank approximation of order-6 tensors and related initialization math.

Provides the rank-r fit that extracts discrete fiber peaks from an fODF
tensor, the 2x2 tangent-space Hessian of the rank-1 objective at a peak
(used to read off fanning parameters), the per-fiber residual tensor, and
a tiny nonnegative least-squares fit for volume fractions.  All distances
and errors use the apolar inner product from :mod:`fanfilter.tensor`.
"""

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import tensor as tn
from .errors import ContractError, DegenerateFractionError

_DEG = np.pi / 180.0


def canonical_sign(v):
    """Flip v so that v_z > 0, tie-breaking on v_y then v_x."""
    v = np.asarray(v, dtype=float)
    if v[2] < 0 or (v[2] == 0 and (v[1] < 0 or (v[1] == 0 and v[0] < 0))):
        return -v
    return v


@dataclass
class FiberPeak:
    alpha: float
    v: np.ndarray

    def __post_init__(self):
        self.v = canonical_sign(tn.check_unit(self.v))
        if self.alpha < 0:
            raise ContractError("peak volume fraction must be nonnegative")


@dataclass
class TangentHessian:
    matrix: np.ndarray   # 2x2 in the (t1, t2) tangent frame
    lam1: float
    lam2: float
    u2: np.ndarray       # world-space tangent direction of lam2 eigenvector
    flagged: bool = False


def _fibonacci_hemisphere(n):
    i = np.arange(n)
    z = (i + 0.5) / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


_START_DIRS = _fibonacci_hemisphere(32)


def _power_iteration(T, v0, iters=100, tol=1e-13):
    """Dominant rank-1 direction of T by symmetric higher-order power iteration."""
    v = v0 / np.linalg.norm(v0)
    for _ in range(iters):
        g = tn.poly_grad(T, v)
        nrm = np.linalg.norm(g)
        if nrm < 1e-14:
            break
        v_new = g / nrm
        if np.dot(v_new, v) < 0:
            v_new = -v_new
        if np.linalg.norm(v_new - v) < tol:
            v = v_new
            break
        v = v_new
    return v


def _model_coeffs(alphas, dirs):
    out = np.zeros(tn.NUM_COEFFS)
    for a, v in zip(alphas, dirs):
        out += a * tn.monomials(v)
    return out


def _nnls_alphas(T, dirs):
    responses = [tn.monomials(v) for v in dirs]
    return nnls_fractions(T, responses)


def fit_low_rank(T, r):
    """Fit at most r rank-1 peaks to T, minimizing the apolar error.

    Deflation (best-of-32 power iteration on the residual) provides the
    initialization; joint refinement alternates an NNLS solve for the
    weights with one backtracking projected-gradient step per direction.
    Peaks are sorted by descending weight; peaks below 1% of the largest
    weight are dropped.
    """
    if r not in (1, 2, 3):
        raise ContractError("rank must be 1, 2, or 3")
    T = np.asarray(T, dtype=float)
    if tn.apolar_norm(T) < 1e-12:
        return []

    dirs = []
    residual = T.copy()
    for _ in range(r):
        vals = tn.eval_many(residual, _START_DIRS)
        v = _power_iteration(residual, _START_DIRS[int(np.argmax(vals))])
        alpha = max(tn.apolar_dot(residual, tn.monomials(v)), 0.0)
        if alpha <= 1e-12:
            break
        dirs.append(v)
        residual = residual - alpha * tn.monomials(v)

    if not dirs:
        return []

    alphas = _nnls_alphas(T, dirs)
    err = _fit_error(T, alphas, dirs)
    for _ in range(200):
        for i in range(len(dirs)):
            dirs[i], err = _direction_step(T, alphas, dirs, i, err)
        alphas = _nnls_alphas(T, dirs)
        new_err = _fit_error(T, alphas, dirs)
        if err - new_err < 1e-8 * max(err, 1e-30):
            err = new_err
            break
        err = new_err

    peaks = [FiberPeak(float(a), v) for a, v in zip(alphas, dirs)]
    peaks.sort(key=lambda p: -p.alpha)
    amax = peaks[0].alpha
    return [p for p in peaks if p.alpha >= 0.01 * amax and p.alpha > 0]


def _fit_error(T, alphas, dirs):
    res = T - _model_coeffs(alphas, dirs)
    return tn.apolar_dot(res, res)


def _direction_step(T, alphas, dirs, i, err):
    """One projected-gradient step on direction i with backtracking."""
    if alphas[i] <= 0:
        return dirs[i], err
    res = T - _model_coeffs(alphas, dirs)
    v = dirs[i]
    # dE/dv_i = -2 alpha_i * grad_res(v_i) for E = |res|^2 (apolar)
    g = -2.0 * alphas[i] * tn.poly_grad(res, v)
    g_t = g - np.dot(g, v) * v
    gnorm = np.linalg.norm(g_t)
    if gnorm < 1e-14:
        return v, err
    step = 0.5 / max(gnorm, 1.0)
    for _ in range(25):
        v_new = v - step * g_t
        v_new /= np.linalg.norm(v_new)
        trial = dirs.copy()
        trial[i] = v_new
        new_err = _fit_error(T, alphas, trial)
        if new_err <= err:
            dirs[i] = v_new
            return v_new, new_err
        step *= 0.5
    return v, err


def _tangent_frame(v):
    """Deterministic orthonormal tangent frame {t1, t2} at unit v."""
    a = np.array([0.0, 0.0, 1.0])
    if abs(v[2]) > 0.9:
        a = np.array([1.0, 0.0, 0.0])
    t1 = np.cross(a, v)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(v, t1)
    return t1, t2


def _geodesic(v, t, theta):
    return np.cos(theta) * v + np.sin(theta) * t


def rank1_objective(T_res, v):
    """E(v) = |T_res - v^{o6}|^2 under the apolar norm, for unit v."""
    # |v^{o6}|^2 = 1 on the sphere, so only the cross term varies.
    return (tn.apolar_dot(T_res, T_res)
            - 2.0 * float(tn.eval_many(T_res, v)) + 1.0)


def tangent_hessian(T_res, v_star, step=1e-3):
    """Second derivatives of the rank-1 objective at a peak direction.

    Central finite differences of E along geodesics through v_star, in
    the deterministic tangent frame.  A negative lam2 is clamped to zero
    and flagged; a direction too far from a local optimum (estimated
    offset > 5 degrees from the tangent gradient) is also flagged.
    """
    T_res = np.asarray(T_res, dtype=float)
    v = tn.check_unit(v_star)
    t1, t2 = _tangent_frame(v)
    h = step

    def E(u):
        return rank1_objective(T_res, u)

    e0 = E(v)
    d11 = (E(_geodesic(v, t1, h)) - 2 * e0 + E(_geodesic(v, t1, -h))) / h ** 2
    d22 = (E(_geodesic(v, t2, h)) - 2 * e0 + E(_geodesic(v, t2, -h))) / h ** 2
    diag = (t1 + t2) / np.sqrt(2.0)
    anti = (t1 - t2) / np.sqrt(2.0)
    dpp = (E(_geodesic(v, diag, h)) - 2 * e0 + E(_geodesic(v, diag, -h))) / h ** 2
    dmm = (E(_geodesic(v, anti, h)) - 2 * e0 + E(_geodesic(v, anti, -h))) / h ** 2
    d12 = 0.5 * (dpp - dmm)

    H = np.array([[d11, d12], [d12, d22]])
    w, U = np.linalg.eigh(H)          # ascending
    lam1, lam2 = float(w[1]), float(w[0])
    u2_local = U[:, 0]
    u2 = u2_local[0] * t1 + u2_local[1] * t2

    flagged = False
    g = -2.0 * tn.poly_grad(T_res, v)
    g_t = g - np.dot(g, v) * v
    scale = max(lam1, 1e-8)
    if np.linalg.norm(g_t) / scale > np.sin(5.0 * _DEG):
        flagged = True
    if lam2 < 0:
        lam2 = 0.0
        flagged = True
    return TangentHessian(H, lam1, lam2, u2, flagged)


def residual_fodf(T, peaks, i):
    """Residual tensor for fiber i, normalized to unit volume fraction."""
    if not 0 <= i < len(peaks):
        raise ContractError("fiber index out of range")
    if peaks[i].alpha < 1e-6:
        raise DegenerateFractionError("volume fraction too small to normalize")
    T = np.asarray(T, dtype=float)
    res = T.copy()
    for j, p in enumerate(peaks):
        if j != i:
            res -= p.alpha * tn.monomials(p.v)
    return res / peaks[i].alpha


def nnls_fractions(T, responses):
    """Nonnegative weights minimizing |T - sum a_i responses_i| (apolar)."""
    if not 1 <= len(responses) <= 3:
        raise ContractError("expected 1 to 3 response tensors")
    sw = np.sqrt(tn.MULTINOMIAL)
    A = np.stack([sw * np.asarray(r, dtype=float) for r in responses], axis=1)
    b = sw * np.asarray(T, dtype=float)
    x, _ = scipy.optimize.nnls(A, b)
    return [float(a) for a in x]
