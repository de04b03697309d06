"""Synthetic fODF fields with analytic ground-truth streamlines.

Phantoms are assembled from per-voxel Bingham compartments pushed
through the same convolution model the tracker assumes, so zero-noise
phantoms round-trip exactly through initialization and tracking.
Supported shapes: a straight bundle, two crossing bundles, a circular
arc, and a bundle that fans out from an apex with anisotropic spread.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import bingham as bg, quat, tensor as tn
from .errors import ConfigError
from .tracker import FodfField, Streamline

_DEG = np.pi / 180.0

SHAPES = ("straight", "crossing", "arc", "fan")


@dataclass
class PhantomSpec:
    shape: str = "straight"
    dims: tuple = (20, 20, 60)
    spacing: tuple = (1.0, 1.0, 1.0)
    radius_mm: float = 4.0
    crossing_angle_deg: float = 90.0
    arc_radius_mm: float = 20.0
    fan_half_angle_mu2_deg: float = 30.0
    fan_half_angle_mu3_deg: float = 0.0
    kappa: float = 40.0
    beta: float = 0.0
    noise_sigma: float = 0.0
    ref_step_mm: float = 0.5
    # spacing between fan reference lines; defaults to ref_step_mm
    ref_line_spacing_mm: float = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError("unknown phantom shape %r" % self.shape)
        if not (0.0 <= self.fan_half_angle_mu2_deg <= 60.0
                and 0.0 <= self.fan_half_angle_mu3_deg <= 60.0):
            raise ConfigError("fan opening half-angles must be in [0, 60] deg")
        if self.noise_sigma < 0:
            raise ConfigError("noise level must be nonnegative")
        if self.ref_step_mm <= 0 or (self.ref_line_spacing_mm is not None
                                     and self.ref_line_spacing_mm <= 0):
            raise ConfigError("reference step/spacing must be positive")
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError("unknown phantom keys: %s"
                              % ", ".join(sorted(unknown)))
        return cls(**data)


def _grid_points(spec):
    nx, ny, nz = spec.dims
    sp = np.asarray(spec.spacing)
    ii = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                              indexing='ij'), axis=-1)
    return ii * sp


def _beta_for_spread(kappa, sigma_rad):
    """Anisotropic spread: the Bingham density near its main axis falls
    like exp(-(kappa - beta) t2^2) toward mu2, so a target angular
    standard deviation sigma along mu2 needs kappa - beta = 1/(2 sigma^2);
    clamped to the admissible [0, kappa - 2] range."""
    if sigma_rad <= 0:
        return 0.0
    return float(np.clip(kappa - 1.0 / (2.0 * sigma_rad ** 2),
                         0.0, kappa - 2.0))


class _Bundle:
    """Per-voxel membership, distance to the core, and local frame."""

    def __init__(self, inside, dist, mu1, mu2, kappa, beta):
        self.inside = inside      # (nx,ny,nz) bool
        self.dist = dist          # mm outside the core (0 inside)
        self.mu1 = mu1            # (nx,ny,nz,3)
        self.mu2 = mu2
        self.kappa = kappa        # (nx,ny,nz)
        self.beta = beta


def _straight_bundle(spec, pts, axis, center, z_range=None):
    d = pts - center
    radial = d - np.einsum('...i,i->...', d, axis)[..., None] * axis
    rdist = np.linalg.norm(radial, axis=-1)
    along = np.einsum('...i,i->...', d, axis)
    dist = np.maximum(rdist - spec.radius_mm, 0.0)
    inside = rdist <= spec.radius_mm
    if z_range is not None:
        lo, hi = z_range
        inside &= (along >= lo) & (along <= hi)
        dist = np.where((along >= lo) & (along <= hi), dist, np.inf)
    shape = pts.shape[:-1]
    mu1 = np.broadcast_to(axis, shape + (3,)).copy()
    perp = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(perp, axis)) > 0.9:
        perp = np.array([1.0, 0.0, 0.0])
    mu2_vec = perp - np.dot(perp, axis) * axis
    mu2_vec /= np.linalg.norm(mu2_vec)
    mu2 = np.broadcast_to(mu2_vec, shape + (3,)).copy()
    kb = np.full(shape, spec.kappa)
    return _Bundle(inside, dist, mu1, mu2, kb,
                   np.full(shape, float(np.clip(spec.beta, 0,
                                                spec.kappa - 2))))


def _line_ref(p0, p1, step):
    n = max(int(np.ceil(np.linalg.norm(p1 - p0) / step)), 1)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return Streamline(p0 + t * (p1 - p0), "max-steps")


def _gen_straight(spec, pts):
    ext = np.asarray(spec.dims) * np.asarray(spec.spacing)
    center = np.array([0.5 * ext[0], 0.5 * ext[1], 0.0])
    axis = np.array([0.0, 0.0, 1.0])
    bundle = _straight_bundle(spec, pts, axis, center)
    refs = [_line_ref(center, center + np.array([0, 0, ext[2] - spec.spacing[2]]),
                      spec.ref_step_mm)]
    return [bundle], refs


def _gen_crossing(spec, pts):
    ext = np.asarray(spec.dims) * np.asarray(spec.spacing)
    center = ext / 2.0
    a = spec.crossing_angle_deg * _DEG
    ax1 = np.array([0.0, 0.0, 1.0])
    ax2 = np.array([0.0, np.sin(a), np.cos(a)])
    b1 = _straight_bundle(spec, pts, ax1, center)
    b2 = _straight_bundle(spec, pts, ax2, center)
    half = 0.45 * float(np.min(ext))
    refs = [_line_ref(center - half * ax1, center + half * ax1,
                      spec.ref_step_mm),
            _line_ref(center - half * ax2, center + half * ax2,
                      spec.ref_step_mm)]
    return [b1, b2], refs


def _gen_arc(spec, pts):
    """Quarter arc in the x-z plane around a center on the volume edge."""
    ext = np.asarray(spec.dims) * np.asarray(spec.spacing)
    c = np.array([0.0, 0.5 * ext[1], 0.0])
    R = spec.arc_radius_mm
    d = pts - c
    rho = np.sqrt(d[..., 0] ** 2 + d[..., 2] ** 2)
    inplane = np.abs(d[..., 1])
    core = np.sqrt((rho - R) ** 2 + inplane ** 2)
    inside = core <= spec.radius_mm
    dist = np.maximum(core - spec.radius_mm, 0.0)
    # tangent of the circle through each point
    phi = np.arctan2(d[..., 2], d[..., 0])
    mu1 = np.stack([-np.sin(phi), np.zeros_like(phi), np.cos(phi)], axis=-1)
    mu2 = np.broadcast_to(np.array([0.0, 1.0, 0.0]), mu1.shape).copy()
    shape = pts.shape[:-1]
    kb = np.full(shape, spec.kappa)
    bundle = _Bundle(inside, dist, mu1, mu2, kb,
                     np.full(shape, float(np.clip(spec.beta, 0,
                                                  spec.kappa - 2))))
    ang = np.linspace(0.0, 0.5 * np.pi,
                      max(int(np.ceil(0.5 * np.pi * R / spec.ref_step_mm)), 2))
    ref = Streamline(np.stack([c[0] + R * np.cos(ang),
                               np.full_like(ang, c[1]),
                               c[2] + R * np.sin(ang)], axis=1), "max-steps")
    return [bundle], [ref]


def _gen_fan(spec, pts):
    """Stem along +z that fans in the y-z plane beyond an apex."""
    ext = np.asarray(spec.dims) * np.asarray(spec.spacing)
    cx, cy = 0.5 * ext[0], 0.5 * ext[1]
    z_apex = 0.3 * ext[2]
    apex = np.array([cx, cy, z_apex])
    theta = spec.fan_half_angle_mu2_deg * _DEG
    sigma2 = theta / np.sqrt(3.0)          # uniform ray spread, std of angle
    shape = pts.shape[:-1]

    dx = np.abs(pts[..., 0] - cx)
    dy = pts[..., 1] - cy
    dz = pts[..., 2] - z_apex

    # stem region (below apex): thin slab in y matching the fan plane,
    # full slab thickness in x
    stem_half_y = 1.0
    in_stem = (pts[..., 2] <= z_apex) & (dx <= spec.radius_mm) \
        & (np.abs(dy) <= stem_half_y)
    stem_dist = np.where(
        pts[..., 2] <= z_apex,
        np.sqrt(np.maximum(dx - spec.radius_mm, 0.0) ** 2
                + np.maximum(np.abs(dy) - stem_half_y, 0.0) ** 2),
        np.inf)

    # fan wedge (beyond apex): |psi| <= theta in the y-z plane, capped at
    # the reference-ray length so every model terminates near the tips
    r = np.sqrt(dy ** 2 + dz ** 2)
    r_cap = 0.95 * (ext[2] - z_apex)
    psi = np.arctan2(dy, dz)
    ang_excess = np.maximum(np.abs(psi) - theta, 0.0)
    wedge_dist = np.sqrt((r * np.sin(np.minimum(ang_excess, 0.5 * np.pi))) ** 2
                         + np.maximum(dx - spec.radius_mm, 0.0) ** 2
                         + np.maximum(r - r_cap, 0.0) ** 2)
    in_fan = (dz > 0) & (ang_excess == 0.0) & (dx <= spec.radius_mm) \
        & (r <= r_cap)
    fan_dist = np.where(dz > 0, np.maximum(wedge_dist, 0.0), np.inf)

    inside = in_stem | in_fan
    dist = np.minimum(stem_dist, fan_dist)

    mu1 = np.zeros(shape + (3,))
    mu1[..., 2] = 1.0
    ray = np.stack([np.zeros_like(dy), dy, dz], axis=-1)
    rn = np.linalg.norm(ray, axis=-1)
    ok = (dz > 0) & (rn > 1e-9)
    mu1[ok] = ray[ok] / rn[ok][..., None]
    # fanning spreads within the y-z plane: mu2 = in-plane normal to mu1
    mu2 = np.zeros(shape + (3,))
    mu2[..., 1] = 1.0
    mu2[ok] = np.stack([np.zeros_like(dy), dz, -dy], axis=-1)[ok] \
        / rn[ok][..., None]

    kappa = np.full(shape, spec.kappa)
    beta = np.zeros(shape)
    beta[ok] = _beta_for_spread(spec.kappa, sigma2)
    if spec.fan_half_angle_mu3_deg > 0:
        # isotropic floor: extra spread along mu3 reduces kappa instead
        sig3 = spec.fan_half_angle_mu3_deg * _DEG / np.sqrt(3.0)
        kappa3 = max(1.0 / (2.0 * sig3 ** 2), bg.KAPPA_MIN)
        kappa = np.where(ok, min(spec.kappa, kappa3), kappa)

    bundle = _Bundle(inside, dist, mu1, mu2, kappa, beta)

    # references fill the wedge slab: one fiber per (ray angle, x offset),
    # mirroring a dense reference tractography rather than a single
    # centerline per ray
    r_max = r_cap + 1.0
    refs = []
    spacing = spec.ref_line_spacing_mm
    if spacing is None:
        spacing = spec.ref_step_mm
    n_x = max(int(np.ceil(2.0 * spec.radius_mm / spacing)) + 1, 3)
    n_psi = max(int(np.ceil(2.0 * theta * r_cap / spacing)) + 1, 3)
    for x_off in np.linspace(-1.0, 1.0, n_x) * spec.radius_mm:
        base = np.array([cx + x_off, cy, 0.05 * ext[2]])
        apex_o = apex + np.array([x_off, 0.0, 0.0])
        for psi_i in np.linspace(-theta, theta, n_psi):
            u = np.array([0.0, np.sin(psi_i), np.cos(psi_i)])
            tip = apex_o + r_max * u
            stem = _line_ref(base, apex_o, spec.ref_step_mm).points
            ray_pts = _line_ref(apex_o, tip, spec.ref_step_mm).points
            refs.append(Streamline(np.concatenate([stem, ray_pts[1:]]),
                                   "max-steps"))
        # stem fibers filling the slab thickness in y; they end at the
        # apex plane, where the fan takes over
        for y_off in (-stem_half_y, -0.5 * stem_half_y,
                      0.5 * stem_half_y, stem_half_y):
            refs.append(_line_ref(base + np.array([0.0, y_off, 0.0]),
                                  apex_o + np.array([0.0, y_off, 0.0]),
                                  spec.ref_step_mm))
    return [bundle], refs


def gen_phantom(spec, rng=None):
    """Build the fODF field and reference streamlines for a spec."""
    pts = _grid_points(spec)
    builders = {"straight": _gen_straight, "crossing": _gen_crossing,
                "arc": _gen_arc, "fan": _gen_fan}
    bundles, refs = builders[spec.shape](spec, pts)
    if len(bundles) > 3:
        raise ConfigError("at most three overlapping bundles are supported")

    shape = spec.dims
    coeffs = np.zeros(shape + (tn.NUM_COEFFS,))
    wm = np.zeros(shape)
    falloff = 2.0 * float(np.max(spec.spacing))
    for b in bundles:
        idx = np.argwhere(b.inside)
        if len(idx):
            mu1 = b.mu1[b.inside]
            mu2 = b.mu2[b.inside]
            kap = b.kappa[b.inside]
            bet = b.beta[b.inside]
            _, canon = bg.axial_moments(kap, bet)
            quats = np.stack([quat.quat_from_frame(m1, m2)
                              for m1, m2 in zip(mu1, mu2)])
            R = quat.quat_to_mat_many(quats)
            resp = tn.rotate_many(canon, R)
            coeffs[b.inside] += resp
        wm_b = np.clip(1.0 - b.dist / falloff, 0.0, 1.0)
        wm = np.maximum(wm, wm_b)

    if spec.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        mask = wm > 0
        coeffs[mask] += spec.noise_sigma * rng.standard_normal(
            coeffs[mask].shape)

    field = FodfField(coeffs, wm, np.asarray(spec.spacing),
                      np.zeros(3))
    return field, refs
