"""Unit quaternions, Modified Rodrigues Parameters, and chart maps.

Quaternions are stored as [w, x, y, z].  The MRP chart is
e = 4 q_vec / (1 + q_w) with inverse (16 - |e|^2, 8 e) / (16 + |e|^2);
it covers the hemisphere q_w >= 0, i.e. |e| <= 4.  Chart maps centered
at a mean quaternion compose with the quaternion product.
"""

import numpy as np

from .errors import ContractError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def qmul_many(a, b):
    """Hamilton product for arrays of shape (..., 4)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def qconj(q):
    q = np.asarray(q, float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def qnormalize(q, hemisphere=True):
    q = np.asarray(q, float)
    out = q / np.linalg.norm(q, axis=-1, keepdims=True)
    if hemisphere:
        flip = out[..., 0] < 0
        out = np.where(flip[..., None], -out, out)
    return out


def quat_to_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_to_mat_many(q):
    q = np.asarray(q, float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(np.shape(w) + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def mat_to_quat(R):
    """Unit quaternion (q_w >= 0) for a proper rotation matrix."""
    R = np.asarray(R, float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return qnormalize(q)


def mrp_from_quat(q):
    """MRP coordinates of q; the sign is fixed to the q_w >= 0 hemisphere."""
    q = np.asarray(q, float)
    if q[..., 0].ndim == 0:
        if q[0] < 0:
            q = -q
        return 4.0 * q[1:] / (1.0 + q[0])
    q = np.where((q[..., :1] < 0), -q, q)
    return 4.0 * q[..., 1:] / (1.0 + q[..., :1])


def quat_from_mrp(e):
    e = np.asarray(e, float)
    n2 = np.sum(e * e, axis=-1)
    if np.any(n2 > 16.0 + 1e-9):
        raise ContractError("MRP coordinates must satisfy |e| <= 4")
    out = np.empty(e.shape[:-1] + (4,))
    denom = 16.0 + n2
    out[..., 0] = (16.0 - n2) / denom
    out[..., 1:] = 8.0 * e / denom[..., None]
    return out


def chart_to(q, chart_q):
    """Coordinates of q in the MRP chart centered at chart_q."""
    return mrp_from_quat(qmul_many(qconj(chart_q), q))


def chart_from(e, chart_q):
    """Quaternion for chart coordinates e in the chart centered at chart_q."""
    return qmul_many(chart_q, quat_from_mrp(e))


def quat_from_frame(mu1, mu2):
    """Quaternion whose rotation maps e_z to mu1 and e_y to mu2."""
    mu1 = np.asarray(mu1, float)
    mu2 = np.asarray(mu2, float)
    if abs(np.linalg.norm(mu1) - 1) > 1e-9 or abs(np.linalg.norm(mu2) - 1) > 1e-9:
        raise ContractError("frame axes must be unit vectors")
    if abs(np.dot(mu1, mu2)) > 1e-6:
        raise ContractError("frame axes must be orthogonal")
    mu3 = np.cross(mu1, mu2)
    R = np.stack([-mu3, mu2, mu1], axis=1)
    return mat_to_quat(R)
