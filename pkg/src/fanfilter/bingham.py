"""Bingham distributions, their order-6 moment tensors, and lookup tables.

The density on the unit sphere is

    f(x) = exp(kappa <mu1, x>^2 + beta <mu2, x>^2) / N(kappa, beta),

with 0 <= beta <= kappa.  The convolution of the rank-1 kernel with this
distribution equals the order-6 raw moment tensor E_f[x^{o6}] contracted
with the query direction, so the canonical (mu1 = e_z, mu2 = e_y) moment
tensor is what the convolution table stores; orientation is applied
afterwards by rotating the tensor.

Integrals are evaluated with Gauss-Legendre quadrature in the polar
variable t = cos(theta) combined with an exact Bessel-series reduction of
the azimuthal integral, which is equivalent to (and more accurate than) a
dense product grid.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.special
import scipy.spatial

from . import quat, tensor as tn
from .errors import (ContractError, DomainError, FormatError, LutRangeError,
                     SamplingError)

KAPPA_MIN = 2.1
KAPPA_MAX = 89.0
GRID_STEP = 0.1
N_GAUSS = 256

BLUT_MAGIC = b"BLUT1\0"
BLUT_VERSION = 1

# The ten even-exponent monomials; all others have zero moments.
EVEN_IDX = np.where(~np.any(tn.EXPONENTS % 2, axis=1))[0]
_EVEN_EXPS = tn.EXPONENTS[EVEN_IDX]


def _cos_sin_harmonics():
    """Coefficients h_k with cos^a(p) sin^b(p) = sum_k h_k cos(2 k p)."""
    m = 16
    phi = 2.0 * np.pi * np.arange(m) / m
    H = np.zeros((4, len(_EVEN_EXPS)))
    for col, (a, b, _) in enumerate(_EVEN_EXPS):
        f = np.cos(phi) ** a * np.sin(phi) ** b
        H[0, col] = np.mean(f)
        for k in range(1, 4):
            H[k, col] = 2.0 * np.mean(f * np.cos(2 * k * phi))
    return H


_HARM = _cos_sin_harmonics()

_gauss_cache = {}


def _leggauss(n):
    if n not in _gauss_cache:
        _gauss_cache[n] = np.polynomial.legendre.leggauss(n)
    return _gauss_cache[n]


def axial_moments(kappa, beta, n_gauss=N_GAUSS):
    """Normalization N and order-6 moment coefficients for a batch.

    Returns (N, coeffs) with N of shape (m,) and coeffs of shape (m, 28)
    holding E_f[x^a y^b z^c] for the canonical frame (main axis e_z,
    secondary axis e_y).
    """
    kappa = np.atleast_1d(np.asarray(kappa, float))
    beta = np.atleast_1d(np.asarray(beta, float))
    kappa, beta = np.broadcast_arrays(kappa, beta)
    t, wt = _leggauss(n_gauss)
    t2 = t * t
    omt = 1.0 - t2
    s = beta[:, None] * omt[None, :]
    base = np.exp(kappa[:, None] * t2[None, :] + s) * wt
    bess = [scipy.special.ive(k, 0.5 * s) for k in range(4)]

    pref = np.empty((len(_EVEN_EXPS), len(t)))
    for row, (a, b, c) in enumerate(_EVEN_EXPS):
        pref[row] = omt ** ((a + b) // 2) * t ** c

    N = 2.0 * np.pi * np.sum(base * bess[0], axis=1)
    I = np.zeros((len(kappa), len(_EVEN_EXPS)))
    for k in range(4):
        hk = _HARM[k]
        cols = np.abs(hk) > 1e-14
        if not np.any(cols):
            continue
        S = (base * bess[k]) @ pref[cols].T
        I[:, cols] += ((-1.0) ** k) * hk[cols] * S
    I *= 2.0 * np.pi

    coeffs = np.zeros((len(kappa), tn.NUM_COEFFS))
    coeffs[:, EVEN_IDX] = I / N[:, None]
    return N, coeffs


def _check_domain(kappa, beta):
    if kappa < 0 or beta < 0:
        raise DomainError("concentration parameters must be nonnegative")
    if beta > kappa + 1e-12:
        raise DomainError("beta must not exceed kappa")


def norm_const(kappa, beta, n_gauss=N_GAUSS):
    """Normalization integral of exp(kappa z^2 + beta y^2) over the sphere."""
    _check_domain(kappa, beta)
    N, _ = axial_moments(kappa, beta, n_gauss)
    return float(N[0])


def moment6_canonical(kappa, beta, n_gauss=N_GAUSS):
    """Order-6 moment tensor E[x^{o6}] of the canonical Bingham density."""
    _check_domain(kappa, beta)
    _, coeffs = axial_moments(kappa, beta, n_gauss)
    return coeffs[0]


@dataclass
class BinghamCompartment:
    """One fiber population: weight, orientation frame, and concentration."""
    alpha: float
    q: np.ndarray
    kappa: float
    beta: float
    _norm: float = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.q = np.asarray(self.q, float)
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ContractError("frame quaternion must be unit length")
        if self.alpha < 0:
            raise ContractError("volume fraction must be nonnegative")
        if not (0.0 <= self.beta <= self.kappa - 2.0 + 1e-9):
            raise ContractError("beta must lie in [0, kappa - 2]")
        if not (KAPPA_MIN - 1e-9 <= self.kappa <= KAPPA_MAX + 1e-9):
            raise ContractError("kappa outside the tabulated range")

    @property
    def rotation(self):
        return quat.quat_to_mat(self.q)

    @property
    def mu1(self):
        return self.rotation[:, 2]

    @property
    def mu2(self):
        return self.rotation[:, 1]

    @property
    def mu3(self):
        return np.cross(self.mu1, self.mu2)


def bingham_pdf(x, c):
    """Density of the Bingham distribution at unit direction x."""
    x = tn.check_unit(x)
    if c._norm is None:
        c._norm = norm_const(c.kappa, c.beta)
    expo = c.kappa * np.dot(c.mu1, x) ** 2 + c.beta * np.dot(c.mu2, x) ** 2
    return float(np.exp(expo) / c._norm)


def _acg_envelope(kappa, beta):
    """Envelope parameters (omega diag, b) for ACG rejection sampling.

    In the canonical frame the density is proportional to
    exp(-x^T A x) with A = diag(kappa, kappa - beta, 0); b solves
    sum_j 1/(b + 2 lam_j) = 1.
    """
    lam = np.array([kappa, kappa - beta, 0.0])

    # g(b) = sum 1/(b + 2 lam) - 1 is strictly decreasing on (0, 3] with
    # g(0+) = +inf and g(3) <= 0, so Newton from inside the bracket
    # converges; fall back to bisection if an iterate leaves (0, 3).
    b = 1.0
    for _ in range(50):
        r = 1.0 / (b + 2.0 * lam)
        g = r.sum() - 1.0
        if abs(g) < 1e-12:
            break
        step = g / np.sum(r * r)
        b_new = b + step
        if not 0.0 < b_new <= 3.0:
            b_new = 0.5 * (b + (3.0 if g > 0 else 0.0))
        b = b_new
    omega = 1.0 + 2.0 * lam / b
    return lam, omega, b


def sample_bingham(c, ref_dir, rng, max_proposals=10000):
    """Draw one direction from c, sign-aligned with ref_dir.

    Rejection sampling with an angular-central-Gaussian envelope; the
    acceptance rate is well above 0.3 over the tabulated parameter range.
    """
    lam, omega, b = _acg_envelope(c.kappa, c.beta)
    log_m = -(3.0 - b) / 2.0 + 1.5 * np.log(3.0 / b)
    R = c.rotation
    ref_dir = np.asarray(ref_dir, float)
    inv_sqrt = 1.0 / np.sqrt(omega)
    batch = 64
    drawn = 0
    while drawn < max_proposals:
        y = rng.standard_normal((batch, 3)) * inv_sqrt
        u = y / np.linalg.norm(y, axis=1, keepdims=True)
        quad_a = (u * u) @ lam
        quad_o = (u * u) @ omega
        log_acc = -quad_a - log_m + 1.5 * np.log(quad_o)
        w = rng.random(batch)
        ok = np.log(w) < log_acc
        drawn += batch
        if np.any(ok):
            x = R @ u[int(np.argmax(ok))]
            if np.dot(x, ref_dir) < 0:
                x = -x
            return x
    raise SamplingError("rejection sampler exhausted its proposal budget")


def _grid_nodes(kappa_start, kappa_step, kappa_count, beta_step):
    """Flat (kappa, beta) arrays for every node of a triangular grid."""
    kappas = np.round(kappa_start + kappa_step * np.arange(kappa_count), 10)
    ks, bs = [], []
    for k in kappas:
        n = int(np.floor((k - 2.0) / beta_step + 1e-9)) + 1
        ks.append(np.full(n, k))
        bs.append(np.round(beta_step * np.arange(n), 10))
    return np.concatenate(ks), np.concatenate(bs)


class _TriangularLut:
    """Triangular (kappa, beta) grid with beta <= kappa - 2 per column."""

    def __init__(self, kappa_start, kappa_step, kappa_count, beta_step,
                 quad_order, payload):
        self.kappa_start = float(kappa_start)
        self.kappa_step = float(kappa_step)
        self.kappa_count = int(kappa_count)
        self.beta_step = float(beta_step)
        self.quad_order = int(quad_order)
        self.kappas = np.round(self.kappa_start
                               + self.kappa_step * np.arange(self.kappa_count),
                               10)
        self.kappa_end = float(self.kappas[-1])
        self.counts = np.array(
            [int(np.floor((k - 2.0) / self.beta_step + 1e-9)) + 1
             for k in self.kappas], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.payload = np.asarray(payload, float)
        if self.payload.shape[0] != int(np.sum(self.counts)):
            raise FormatError("payload size does not match the grid shape")

    def node_params(self):
        """Flat arrays of the (kappa, beta) values of every node."""
        ks, bs = [], []
        for k, n in zip(self.kappas, self.counts):
            ks.append(np.full(n, k))
            bs.append(np.round(self.beta_step * np.arange(n), 10))
        return np.concatenate(ks), np.concatenate(bs)

    def node(self, i, j):
        return self.payload[self.offsets[i] + j]

    def _column_value(self, i, beta):
        """Linear interpolation in beta within kappa-column i."""
        n = self.counts[i]
        bmax = (n - 1) * self.beta_step
        b = min(max(beta, 0.0), bmax)
        if n == 1:
            return self.payload[self.offsets[i]]
        x = b / self.beta_step
        j0 = min(int(np.floor(x + 1e-12)), n - 2)
        f = x - j0
        base = self.offsets[i] + j0
        return (1 - f) * self.payload[base] + f * self.payload[base + 1]

    def interpolate(self, kappa, beta):
        """Bilinear value at (kappa, beta); returns (value, clamped)."""
        clamped = False
        tol = 1e-9
        if (kappa < self.kappa_start - self.kappa_step - tol
                or kappa > self.kappa_end + self.kappa_step + tol
                or beta < -self.beta_step - tol
                or beta > kappa - 2.0 + self.beta_step + tol):
            raise LutRangeError(
                "(kappa=%g, beta=%g) more than one grid step outside the "
                "table" % (kappa, beta))
        if kappa < self.kappa_start or kappa > self.kappa_end or beta < 0:
            clamped = True
        k = min(max(kappa, self.kappa_start), self.kappa_end)
        b = max(beta, 0.0)
        if b > k - 2.0 + tol:
            clamped = clamped or b > k - 2.0 + self.beta_step * 0.5
        x = (k - self.kappa_start) / self.kappa_step
        i0 = min(int(np.floor(x + 1e-12)), self.kappa_count - 1)
        if self.kappa_count == 1:
            return self._column_value(0, b), clamped
        i0 = min(i0, self.kappa_count - 2)
        f = x - i0
        v0 = self._column_value(i0, b)
        v1 = self._column_value(i0 + 1, b)
        return (1 - f) * v0 + f * v1, clamped

    def _columns_value(self, cols, betas):
        """Vectorized per-column beta interpolation; cols, betas 1-D arrays."""
        n = self.counts[cols]
        bmax = (n - 1) * self.beta_step
        bc = np.minimum(betas, bmax)
        y = bc / self.beta_step
        j0 = np.minimum((y + 1e-12).astype(np.int64), np.maximum(n - 2, 0))
        fy = (y - j0)[:, None]
        base = self.offsets[cols]
        j1 = np.minimum(j0 + 1, n - 1)
        return ((1.0 - fy) * self.payload[base + j0]
                + fy * self.payload[base + j1])

    def interpolate_many(self, kappas, betas):
        """Batched bilinear interpolation; out-of-range values are clamped."""
        k = np.clip(np.asarray(kappas, float), self.kappa_start, self.kappa_end)
        b = np.maximum(np.asarray(betas, float), 0.0)
        x = (k - self.kappa_start) / self.kappa_step
        i0 = np.minimum((x + 1e-12).astype(np.int64),
                        max(self.kappa_count - 2, 0))
        fx = (x - i0)[:, None]
        v0 = self._columns_value(i0, b)
        if self.kappa_count == 1:
            return v0
        v1 = self._columns_value(np.minimum(i0 + 1, self.kappa_count - 1), b)
        return (1.0 - fx) * v0 + fx * v1

    def save(self, path):
        header = struct.pack("<6sII", BLUT_MAGIC, BLUT_VERSION,
                             self.quad_order)
        header += struct.pack("<ddId", self.kappa_start, self.kappa_step,
                              self.kappa_count, self.beta_step)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.payload, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        head_fmt = "<6sII"
        grid_fmt = "<ddId"
        n0 = struct.calcsize(head_fmt)
        n1 = struct.calcsize(grid_fmt)
        if len(raw) < n0 + n1:
            raise FormatError("truncated lookup table file")
        magic, version, quad_order = struct.unpack_from(head_fmt, raw)
        if magic != BLUT_MAGIC:
            raise FormatError("bad magic at byte 0: %r" % magic)
        if version != BLUT_VERSION:
            raise FormatError("unsupported lookup table version %d" % version)
        ks, kst, kc, bst = struct.unpack_from(grid_fmt, raw, n0)
        body = np.frombuffer(raw, dtype="<f8", offset=n0 + n1)
        counts = [int(np.floor((ks + kst * i - 2.0) / bst + 1e-9)) + 1
                  for i in range(kc)]
        total = int(np.sum(counts))
        if total == 0 or body.size % total:
            raise FormatError("payload size does not match the grid "
                              "(offset %d)" % (n0 + n1))
        width = body.size // total
        if width not in (2, tn.NUM_COEFFS):
            raise FormatError("unexpected node width %d" % width)
        return cls(ks, kst, kc, bst, quad_order,
                   body.reshape(total, width).copy())


class ConvLut(_TriangularLut):
    """Canonical convolved response tensors on the (kappa, beta) grid."""


class InitLut(_TriangularLut):
    """Hessian eigenvalue pairs (lam1, lam2) on the (kappa, beta) grid."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._tree = None

    def _kdtree(self):
        if self._tree is None:
            self._tree = scipy.spatial.cKDTree(self.payload)
        return self._tree


def build_conv_lut(kappa_start=KAPPA_MIN, kappa_step=GRID_STEP,
                   kappa_end=KAPPA_MAX, beta_step=GRID_STEP,
                   n_gauss=N_GAUSS, chunk=16384):
    """Tabulate canonical unit-fraction responses over the parameter grid."""
    kappa_count = int(round((kappa_end - kappa_start) / kappa_step)) + 1
    ks, bs = _grid_nodes(kappa_start, kappa_step, kappa_count, beta_step)
    payload = np.empty((len(ks), tn.NUM_COEFFS))
    for lo in range(0, len(ks), chunk):
        hi = min(lo + chunk, len(ks))
        _, payload[lo:hi] = axial_moments(ks[lo:hi], bs[lo:hi], n_gauss)
    return ConvLut(kappa_start, kappa_step, kappa_count, beta_step, n_gauss,
                   payload)


def _hessian_fd_dirs(step=1e-3):
    """FD evaluation directions matching lowrank.tangent_hessian at e_z."""
    v = np.array([0.0, 0.0, 1.0])
    a = np.array([1.0, 0.0, 0.0])
    t1 = np.cross(a, v)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(v, t1)
    diag = (t1 + t2) / np.sqrt(2.0)
    anti = (t1 - t2) / np.sqrt(2.0)
    dirs = [v]
    for t in (t1, t2, diag, anti):
        dirs.append(np.cos(step) * v + np.sin(step) * t)
        dirs.append(np.cos(step) * v - np.sin(step) * t)
    return np.stack(dirs)


def build_init_lut(conv, step=1e-3):
    """Hessian-eigenvalue table derived from a convolution table.

    Eigenvalues are tabulated for the response normalized by its own
    rank-1 amplitude (the evaluation at the main axis), matching the
    unit-fraction residual that the peak-fitting pipeline hands to the
    tangent Hessian.
    """
    dirs = _hessian_fd_dirs(step)
    wmono = tn.monomials(dirs) * tn.MULTINOMIAL          # (9, 28)
    p = conv.payload @ wmono.T                           # (n, 9)
    amp = p[:, 0]                                        # eval at e_z
    p = p / amp[:, None]
    sq = np.sum(tn.MULTINOMIAL * (conv.payload / amp[:, None]) ** 2, axis=1)
    E = sq[:, None] - 2.0 * p + 1.0
    h2 = step ** 2
    d11 = (E[:, 1] - 2 * E[:, 0] + E[:, 2]) / h2
    d22 = (E[:, 3] - 2 * E[:, 0] + E[:, 4]) / h2
    dpp = (E[:, 5] - 2 * E[:, 0] + E[:, 6]) / h2
    dmm = (E[:, 7] - 2 * E[:, 0] + E[:, 8]) / h2
    d12 = 0.5 * (dpp - dmm)
    mean = 0.5 * (d11 + d22)
    rad = np.sqrt(np.maximum(0.25 * (d11 - d22) ** 2 + d12 ** 2, 0.0))
    lam1 = mean + rad
    lam2 = np.maximum(mean - rad, 0.0)
    return InitLut(conv.kappa_start, conv.kappa_step, conv.kappa_count,
                   conv.beta_step, conv.quad_order,
                   np.stack([lam1, lam2], axis=1))


def conv_response(c, lut):
    """Oriented, weighted response tensor of one compartment."""
    coeffs, _ = lut.interpolate(c.kappa, c.beta)
    return c.alpha * tn.rotate_tensor(coeffs, c.rotation)


def conv_response_many(alphas, quats, kappas, betas, lut):
    """Batched conv_response for parallel arrays of compartment parameters."""
    coeffs = lut.interpolate_many(kappas, betas)
    R = quat.quat_to_mat_many(quats)
    out = tn.rotate_many(coeffs, R)
    return out * np.asarray(alphas, float)[:, None]


@dataclass
class InitEstimate:
    kappa: float
    beta: float
    clamped: bool


def init_from_eigs(l1, l2, lut):
    """Invert the eigenvalue table: (lam1, lam2) -> (kappa, beta).

    Nearest tabulated node, refined by Gauss-Newton on the bilinear
    interpolant; queries outside the attainable hull clamp to the
    boundary and set the flag.
    """
    if not (l1 >= l2 >= 0):
        raise ContractError("eigenvalues must satisfy l1 >= l2 >= 0")
    target = np.array([l1, l2], float)
    _, idx = lut._kdtree().query(target)
    ks, bs = lut.node_params()
    k, b = float(ks[idx]), float(bs[idx])

    dk = 0.25 * lut.kappa_step
    db = 0.25 * lut.beta_step
    clamped = False
    for _ in range(15):
        val, cl = lut.interpolate(k, b)
        r = val - target
        vk, _ = lut.interpolate(min(k + dk, lut.kappa_end), b)
        vk0, _ = lut.interpolate(max(k - dk, lut.kappa_start), b)
        vb, _ = lut.interpolate(k, min(b + db, max(k - 2.0, 0.0)))
        vb0, _ = lut.interpolate(k, max(b - db, 0.0))
        J = np.stack([(vk - vk0) / (2 * dk), (vb - vb0) / (2 * db)], axis=1)
        try:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        delta = np.clip(delta, -5.0, 5.0)
        k = min(max(k + delta[0], lut.kappa_start), lut.kappa_end)
        b = min(max(b + delta[1], 0.0), max(k - 2.0, 0.0))
        if np.linalg.norm(delta) < 1e-10:
            break
    val, _ = lut.interpolate(k, b)
    resid = np.linalg.norm(val - target)
    scale = max(np.linalg.norm(target), 1.0)
    at_edge = (k <= lut.kappa_start + 1e-9 or k >= lut.kappa_end - 1e-9
               or b <= 1e-9 or b >= k - 2.0 - 1e-9)
    if resid > 1e-3 * scale and at_edge:
        clamped = True
    return InitEstimate(float(k), float(b), clamped)
