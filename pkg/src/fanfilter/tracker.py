"""Probabilistic streamline tractography on fODF tensor fields.

Each streamline owns a set of per-fiber UKF states.  A step updates the
filters with the interpolated fODF, selects the compartment closest in
axial angle to the incoming direction, draws a direction from it, takes
a tentative half step (second-order Runge-Kutta), repeats the update and
sampling there, and commits a full step in the re-sampled direction.
"""

from dataclasses import dataclass, field

import numpy as np

from . import bingham as bg, lowrank as lr, quat, tensor as tn, ukf
from .errors import ContractError, FilterDivergence

_DEG = np.pi / 180.0

TERMINATION_REASONS = ("wm-exit", "angle-fail", "bounds", "divergence",
                      "max-steps")


@dataclass
class FodfField:
    """Regular grid of order-6 fODF tensors plus white-matter density."""
    coeffs: np.ndarray       # (nx, ny, nz, 28)
    wm_density: np.ndarray   # (nx, ny, nz) in [0, 1]
    spacing: np.ndarray      # mm per axis
    origin: np.ndarray       # mm position of voxel (0, 0, 0)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, float)
        self.wm_density = np.asarray(self.wm_density, float)
        self.spacing = np.asarray(self.spacing, float)
        self.origin = np.asarray(self.origin, float)
        if self.coeffs.ndim != 4 or self.coeffs.shape[3] != tn.NUM_COEFFS:
            raise ContractError("field coefficients must have shape "
                                "(nx, ny, nz, 28)")
        if self.wm_density.shape != self.coeffs.shape[:3]:
            raise ContractError("white-matter map must match the grid")
        if np.any(self.spacing <= 0):
            raise ContractError("voxel spacing must be positive")
        if np.any(self.wm_density < 0) or np.any(self.wm_density > 1):
            raise ContractError("white-matter density must lie in [0, 1]")

    @property
    def dims(self):
        return self.coeffs.shape[:3]


@dataclass
class Seed:
    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, float)
        self.direction = np.asarray(self.direction, float)
        n = np.linalg.norm(self.direction)
        if n == 0:
            raise ContractError("seed direction must be nonzero")
        self.direction = self.direction / n


@dataclass
class Streamline:
    points: np.ndarray       # (n, 3) mm
    reason: str

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 3)
        if self.reason not in TERMINATION_REASONS:
            raise ContractError("unknown termination reason %r" % self.reason)

    def __len__(self):
        return len(self.points)

    @property
    def length_mm(self):
        if len(self.points) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0),
                                           axis=1)))


def interp_fodf(field, p):
    """Trilinear fODF and white-matter density at p; None if out of bounds."""
    g = (np.asarray(p, float) - field.origin) / field.spacing
    dims = field.dims
    if np.any(g < 0) or np.any(g > np.array(dims) - 1):
        return None
    i0 = np.minimum(g.astype(np.int64), np.array(dims) - 2)
    i0 = np.maximum(i0, 0)
    f = g - i0
    x0, y0, z0 = i0
    c = field.coeffs[x0:x0 + 2, y0:y0 + 2, z0:z0 + 2]
    w = field.wm_density[x0:x0 + 2, y0:y0 + 2, z0:z0 + 2]
    wx = np.array([1 - f[0], f[0]])
    wy = np.array([1 - f[1], f[1]])
    wz = np.array([1 - f[2], f[2]])
    weights = wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
    T = np.einsum('xyz,xyzc->c', weights, c)
    wm = float(np.sum(weights * w))
    return T, wm


@dataclass
class TrackingConfig:
    model: str = "bingham"
    rank: int = 2
    step_mm: float = 0.5
    seeds_per_point: int = 3
    wm_threshold: float = 0.4
    max_angle_deg: float = 60.0
    max_steps: int = 2000
    min_length_mm: float = 10.0
    bidirectional: bool = False
    q: np.ndarray = None
    r: float = None
    ut: ukf.UtParams = field(default_factory=ukf.UtParams)

    def noise(self):
        return ukf.NoiseConfig.for_model(self.model, self.q, self.r)


def init_seed_state(field, seed, lut_conv, lut_init, rank, noise,
                    model="bingham", wm_threshold=0.4):
    """Initialize per-fiber filter states from the local low-rank fit.

    Returns a list of states sorted by descending volume fraction, or an
    empty list if the seed voxel has no usable peak.
    """
    sample = interp_fodf(field, seed.position)
    if sample is None:
        return []
    T, wm = sample
    if wm < wm_threshold:
        return []
    peaks = lr.fit_low_rank(T, rank)
    if not peaks:
        return []

    params = []
    for i, p in enumerate(peaks):
        res = lr.residual_fodf(T, peaks, i)
        hess = lr.tangent_hessian(res, p.v)
        if hess.flagged and hess.lam1 <= 0:
            est = bg.InitEstimate(30.0, 0.0, True)
            mu2 = lr._tangent_frame(p.v)[0]
        else:
            est = bg.init_from_eigs(hess.lam1, hess.lam2, lut_init)
            mu2 = hess.u2 / np.linalg.norm(hess.u2)
        q = quat.quat_from_frame(p.v, mu2)
        params.append((q, est.kappa, est.beta))

    responses = [tn.rotate_tensor(lut_conv.interpolate(k, b)[0],
                                  quat.quat_to_mat(q))
                 for q, k, b in params]
    alphas = lr.nnls_fractions(T, responses)
    total = sum(alphas)
    if total <= 0:
        return []

    states = []
    for (q, k, b), a in zip(params, alphas):
        if a < 0.05 * total:
            continue
        if model in ("watson", "lowrank") or b < 1e-12:
            # Snap numerically-zero fanning to an exact zero so that a
            # frozen beta dimension stays bitwise at zero.
            b = 0.0
        mean = np.array([a, k, b, 0.0, 0.0, 0.0])
        # Zero process-noise entries freeze their dimension from the start;
        # the filter tolerates the resulting singular covariance.
        cov = np.diag(noise.Q) * 10.0
        states.append(ukf.UkfFiberState(mean, q, cov))
    states.sort(key=lambda s: -s.mean[0])
    return states


def _axial_angle(u, v):
    return float(np.arccos(min(1.0, abs(float(np.dot(u, v))))))


def _select_state(states, direction):
    """Compartment closest in axial angle; ties broken by larger alpha."""
    best, best_key = None, None
    for s in states:
        key = (_axial_angle(s.mu1, direction), -s.mean[0])
        if best_key is None or key < best_key:
            best, best_key = s, key
    return best


def _draw_direction(states, sel_dir, gate_dir, cfg, rng):
    """Sample a step direction within the angular gate, or None.

    Selection uses the most recent direction; the 60-degree gate is
    checked against the direction of the last committed step so that
    direction continuity holds for every accepted step.
    """
    max_angle = cfg.max_angle_deg * _DEG
    sel = _select_state(states, sel_dir)
    if cfg.model == "lowrank":
        d = sel.mu1
        if np.dot(d, sel_dir) < 0:
            d = -d
        if _axial_angle(d, gate_dir) > max_angle:
            return None
        return d
    comp = ukf.state_compartment(sel, cfg.model)
    for _ in range(100):
        d = bg.sample_bingham(comp, sel_dir, rng)
        if _axial_angle(d, gate_dir) <= max_angle:
            return d
    return None


def _update_all(states, z, noise, lut, cfg):
    """Sequentially update every fiber, others frozen at their means."""
    order = sorted(range(len(states)), key=lambda i: -states[i].mean[0])
    for i in order:
        frozen = [ukf.state_compartment(states[j], cfg.model)
                  for j in range(len(states)) if j != i]
        states[i] = ukf.ukf_update(states[i], z, frozen, noise, lut,
                                   model=cfg.model, ut=cfg.ut)


def track_streamline(field, seed, cfg, lut_conv, lut_init, rng):
    """Track one streamline from a seed; returns it with a reason tag."""
    noise = cfg.noise()
    states = init_seed_state(field, seed, lut_conv, lut_init, cfg.rank,
                             noise, cfg.model, cfg.wm_threshold)
    if not states:
        return Streamline(np.array(seed.position)[None, :], "wm-exit")

    h = cfg.step_mm
    p = np.array(seed.position, float)
    d = np.array(seed.direction, float)
    points = [p.copy()]
    reason = "max-steps"
    try:
        for _ in range(cfg.max_steps):
            sample = interp_fodf(field, p)
            if sample is None:
                reason = "bounds"
                break
            z, wm = sample
            if wm < cfg.wm_threshold:
                reason = "wm-exit"
                break
            _update_all(states, z, noise, lut_conv, cfg)
            d1 = _draw_direction(states, d, d, cfg, rng)
            if d1 is None:
                reason = "angle-fail"
                break
            p_half = p + 0.5 * h * d1
            sample = interp_fodf(field, p_half)
            if sample is None:
                reason = "bounds"
                break
            z, wm = sample
            if wm < cfg.wm_threshold:
                reason = "wm-exit"
                break
            _update_all(states, z, noise, lut_conv, cfg)
            d2 = _draw_direction(states, d1, d, cfg, rng)
            if d2 is None:
                reason = "angle-fail"
                break
            p = p + h * d2
            d = d2
            points.append(p.copy())
    except FilterDivergence:
        reason = "divergence"
    return Streamline(np.stack(points), reason)


def seeds_from_reference(reference, plane_point, plane_normal):
    """One seed per crossing of a reference streamline with the plane."""
    n = np.asarray(plane_normal, float)
    nn = np.linalg.norm(n)
    if nn == 0:
        raise ContractError("plane normal must be nonzero")
    n = n / nn
    p0 = np.asarray(plane_point, float)
    seeds = []
    for sl in reference:
        pts = np.asarray(sl.points if isinstance(sl, Streamline) else sl,
                         float)
        if len(pts) < 2:
            continue
        s = (pts - p0) @ n
        for i in range(len(pts) - 1):
            a, b = s[i], s[i + 1]
            if a == 0 and b == 0:
                continue
            if a * b < 0 or (a == 0 and b != 0):
                f = a / (a - b) if a != b else 0.0
                cross = pts[i] + f * (pts[i + 1] - pts[i])
                tan = pts[i + 1] - pts[i]
                tn_ = np.linalg.norm(tan)
                if tn_ == 0:
                    continue
                tan = tan / tn_
                if np.dot(tan, n) < 0:
                    tan = -tan
                seeds.append(Seed(cross, tan))
    return seeds


def rng_for_seed(global_seed, seed_index, repetition):
    """Counter-based RNG stream, reproducible under any parallel order."""
    key = np.array([(np.uint64(global_seed) << np.uint64(32))
                    ^ np.uint64(seed_index),
                    (np.uint64(repetition) << np.uint64(32))
                    ^ np.uint64(0x66616e66)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def track_all(field, seeds, cfg, lut_conv, lut_init, global_seed=0):
    """Track seeds x repetitions serially, in canonical order."""
    out = []
    for si, seed in enumerate(seeds):
        for rep in range(cfg.seeds_per_point):
            rng = rng_for_seed(global_seed, si, rep)
            sl = track_streamline(field, seed, cfg, lut_conv, lut_init, rng)
            if cfg.bidirectional:
                rng_b = rng_for_seed(global_seed, si,
                                     rep + cfg.seeds_per_point)
                back = track_streamline(
                    field, Seed(seed.position, -seed.direction), cfg,
                    lut_conv, lut_init, rng_b)
                if len(back) > 1:
                    pts = np.concatenate([back.points[::-1], sl.points[1:]])
                    sl = Streamline(pts, sl.reason)
            out.append(sl)
    return out
