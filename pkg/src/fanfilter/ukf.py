"""Quaternion-chart Unscented Kalman Filter for per-fiber fanning states.

The 6-dim state is {alpha, kappa, beta, e1, e2, e3}, where e are MRP
coordinates in the chart centered at the state's quaternion.  Every
update re-centers the chart at the weighted-mean orientation of the
sigma points, so the e-part stays near the origin.  The measurement is
the 28-coefficient fODF tensor; its prediction is the convolved Bingham
response of this fiber plus the frozen responses of the other fibers.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import bingham as bg, quat, tensor as tn
from .errors import ContractError, FilterDivergence

STATE_DIM = 6
N_SIGMA = 2 * STATE_DIM + 1

MODELS = ("bingham", "watson", "lowrank")

# Process noise diagonals tuned per model; the bingham and watson values
# follow the published grid search, the lowrank variant reuses the watson
# values without fanning noise.
DEFAULT_Q = {
    "bingham": np.array([0.01, 0.1, 0.1, 0.005, 0.005, 0.005]),
    "watson": np.array([0.05, 0.05, 0.0, 0.02, 0.02, 0.02]),
    "lowrank": np.array([0.05, 0.0, 0.0, 0.02, 0.02, 0.02]),
}
DEFAULT_R = 0.02


@dataclass
class NoiseConfig:
    Q: np.ndarray            # 6 diagonal process-noise entries
    R: float                 # scalar measurement noise (R * I on 28 dims)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, float)
        if self.Q.shape != (STATE_DIM,) or np.any(self.Q < 0) or self.R <= 0:
            raise ContractError("noise entries must be nonnegative, R > 0")

    @classmethod
    def for_model(cls, model, q=None, r=None):
        if model not in MODELS:
            raise ContractError("unknown model %r" % model)
        return cls(DEFAULT_Q[model].copy() if q is None else np.asarray(q, float),
                   DEFAULT_R if r is None else float(r))


@dataclass
class UtParams:
    """Scaled unscented transform parameters."""
    spread: float = 1e-1     # primary scaling (often called alpha)
    prior_weight: float = 2.0  # distribution parameter (often called beta)
    shift: float = 0.0       # secondary scaling (often called kappa)


@dataclass
class UkfFiberState:
    mean: np.ndarray         # {alpha, kappa, beta, e1, e2, e3}
    chart_q: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, float)
        self.chart_q = quat.qnormalize(np.asarray(self.chart_q, float))
        self.cov = np.asarray(self.cov, float)

    @property
    def orientation(self):
        """Current orientation quaternion (chart center shifted by e)."""
        return quat.qnormalize(quat.chart_from(self.mean[3:], self.chart_q))

    @property
    def mu1(self):
        return quat.quat_to_mat(self.orientation)[:, 2]


def clamp_params(alpha, kappa, beta, model="bingham"):
    """Project (alpha, kappa, beta) onto the valid parameter region."""
    alpha = max(alpha, 0.0)
    kappa = min(max(kappa, bg.KAPPA_MIN), bg.KAPPA_MAX)
    if model == "watson" or model == "lowrank":
        beta = 0.0
    else:
        beta = min(max(beta, 0.0), kappa - 2.0)
    return alpha, kappa, beta


def state_compartment(state, model="bingham"):
    """Bingham compartment at the state mean (clamped parameters)."""
    a, k, b = clamp_params(state.mean[0], state.mean[1], state.mean[2], model)
    return bg.BinghamCompartment(a, state.orientation, k, b)


def _ut_weights(ut):
    n = STATE_DIM
    lam = ut.spread ** 2 * (n + ut.shift) - n
    wm = np.full(N_SIGMA, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - ut.spread ** 2 + ut.prior_weight)
    return lam, wm, wc


def _psd_sqrt(M):
    """Symmetric factor S with S @ S.T = M, tolerant of PSD-singular M."""
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return U * np.sqrt(np.clip(w, 0.0, None))


def _ensure_spd(P):
    """Symmetrize and, if needed, jitter P back to positive semidefiniteness.

    Exactly singular covariances are legal: a zero process-noise entry
    freezes that state dimension (e.g. beta in the watson model), so only
    genuinely indefinite matrices receive diagonal jitter.
    """
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w[0] >= -1e-10:
        return P
    for jitter in (1e-8, 1e-7, 1e-6, 1e-5, 1e-4):
        if w[0] + jitter >= 0:
            return P + jitter * np.eye(STATE_DIM)
    raise FilterDivergence("covariance lost positive definiteness")


def _measure_sigma(sig, quats, lut, model, z_frozen):
    """Predicted 28-dim measurement for every sigma point (rows of sig)."""
    alphas = np.maximum(sig[:, 0], 0.0)
    kappas = np.clip(sig[:, 1], bg.KAPPA_MIN, bg.KAPPA_MAX)
    if model == "bingham":
        betas = np.clip(sig[:, 2], 0.0, kappas - 2.0)
    else:
        betas = np.zeros_like(kappas)
    if model == "lowrank":
        mu1 = quat.quat_to_mat_many(quats)[:, :, 2]
        Z = tn.monomials(mu1) * alphas[:, None]
    else:
        Z = bg.conv_response_many(alphas, quats, kappas, betas, lut)
    return Z + z_frozen


def _predicted(state, lut, noise, model, frozen_others, ut):
    """Shared prediction stage; returns sigma set, weights, chart, Z, zbar."""
    lam, wm, wc = _ut_weights(ut)
    # Prediction: random walk plus additive process noise.  P stays PSD,
    # so the eigenvalue-clipping square root needs no extra repair here.
    P = state.cov + np.diag(noise.Q)
    S = _psd_sqrt((STATE_DIM + lam) * P)
    # Dimensions with zero process noise and zero variance are frozen; kill
    # the square root's rounding residue there so they stay bitwise constant
    # (this is what makes the watson model an exact beta = 0 special case of
    # the bingham model).
    frozen = (noise.Q == 0.0) & (np.abs(np.diag(state.cov)) < 1e-40)
    if np.any(frozen):
        S[frozen, :] = 0.0
    sig = np.empty((N_SIGMA, STATE_DIM))
    sig[0] = state.mean
    for i in range(STATE_DIM):
        sig[1 + i] = state.mean + S[:, i]
        sig[1 + STATE_DIM + i] = state.mean - S[:, i]

    # Sigma points thrown past the chart boundary |e| = 4 are folded onto
    # the MRP shadow set (same rotation, other hemisphere parameters).
    e_norm2 = np.sum(sig[:, 3:] ** 2, axis=1)
    over = e_norm2 > 16.0
    if np.any(over):
        sig[over, 3:] *= -16.0 / e_norm2[over, None]

    # Chart update: weighted mean of the embedded parts, pulled back.
    e_bar = wm @ sig[:, 3:]
    nb2 = float(e_bar @ e_bar)
    if nb2 > 16.0:
        e_bar *= -16.0 / nb2
    new_chart = quat.qnormalize(quat.chart_from(e_bar, state.chart_q))
    # Chart transition: re-express every sigma point in the new chart.
    qs = quat.chart_from(sig[:, 3:], state.chart_q)
    qs /= np.sqrt(np.sum(qs * qs, axis=1))[:, None]
    sig[:, 3:] = quat.chart_to(qs, new_chart)

    if frozen_others:
        z_frozen = np.sum([bg.conv_response(c, lut) for c in frozen_others],
                          axis=0)
    else:
        z_frozen = np.zeros(tn.NUM_COEFFS)
    Z = _measure_sigma(sig, qs, lut, model, z_frozen)
    zbar = wm @ Z
    return sig, wm, wc, new_chart, Z, zbar


def predict_measurement(state, lut, noise, frozen_others=(), model="bingham",
                        ut=UtParams()):
    """Predicted measurement (weighted sigma-point mean), for diagnostics."""
    return _predicted(state, lut, noise, model, list(frozen_others), ut)[5]


def ukf_update(state, z, frozen_others, noise, lut, model="bingham",
               ut=UtParams()):
    """One full predict / chart-update / correct cycle.

    z is the 28-coefficient fODF measurement; frozen_others are the
    remaining fibers' compartments, held fixed at their current means.
    """
    if model not in MODELS:
        raise ContractError("unknown model %r" % model)
    z = np.asarray(z, float)
    sig, wm, wc, new_chart, Z, zbar = _predicted(
        state, lut, noise, model, list(frozen_others), ut)

    xbar = wm @ sig
    dx = sig - xbar
    dz = Z - zbar
    Pxx = (dx * wc[:, None]).T @ dx
    Pzz = (dz * wc[:, None]).T @ dz + noise.R * np.eye(tn.NUM_COEFFS)
    Pxz = (dx * wc[:, None]).T @ dz

    try:
        K = np.linalg.solve(Pzz, Pxz.T).T
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("measurement covariance not invertible") from exc

    mean = xbar + K @ (z - zbar)
    P = Pxx - K @ Pzz @ K.T

    mean[0], mean[1], mean[2] = clamp_params(mean[0], mean[1], mean[2], model)
    e_norm = np.linalg.norm(mean[3:])
    if e_norm > 4.0:
        mean[3:] *= 4.0 / e_norm
    P = _ensure_spd(P)
    return replace(state, mean=mean, chart_q=new_chart, cov=P)
