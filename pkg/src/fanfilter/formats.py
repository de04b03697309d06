"""Bit-exact file formats: FOF fields, TSL streamlines, seed lists.

All binary data is little-endian.  Readers report the byte offset of the
first malformed element so truncated or corrupted files are easy to
diagnose; writers are deterministic, so identical inputs always produce
byte-identical files.
"""

import struct

import numpy as np

from . import tensor as tn
from .errors import FormatError
from .tracker import FodfField, Seed, Streamline, TERMINATION_REASONS

FOF_MAGIC = b"FOF1\0\0"
FOF_VERSION = 1
_FOF_HEAD = struct.Struct("<6sI3I6dB")


def write_fof(path, field):
    """Write an fODF field; voxel payload is x-fastest, 28 f32 each."""
    nx, ny, nz = field.dims
    has_wm = 1
    with open(path, "wb") as fh:
        fh.write(_FOF_HEAD.pack(FOF_MAGIC, FOF_VERSION, nx, ny, nz,
                                *field.spacing, *field.origin, has_wm))
        coeffs = np.ascontiguousarray(
            field.coeffs.transpose(2, 1, 0, 3), dtype="<f4")
        fh.write(coeffs.tobytes())
        wm = np.ascontiguousarray(field.wm_density.transpose(2, 1, 0),
                                  dtype="<f4")
        fh.write(wm.tobytes())


def read_fof(path):
    with open(path, "rb") as fh:
        head = fh.read(_FOF_HEAD.size)
        if len(head) < _FOF_HEAD.size:
            raise FormatError("truncated FOF header at byte offset %d"
                              % len(head))
        magic, version, nx, ny, nz, sx, sy, sz, ox, oy, oz, has_wm = \
            _FOF_HEAD.unpack(head)
        if magic != FOF_MAGIC:
            raise FormatError("bad FOF magic at byte offset 0")
        if version != FOF_VERSION:
            raise FormatError("unsupported FOF version %d at byte offset 6"
                              % version)
        n_vox = nx * ny * nz
        want = n_vox * tn.NUM_COEFFS * 4
        raw = fh.read(want)
        if len(raw) < want:
            raise FormatError("truncated FOF payload at byte offset %d"
                              % (_FOF_HEAD.size + len(raw)))
        coeffs = np.frombuffer(raw, dtype="<f4").reshape(
            nz, ny, nx, tn.NUM_COEFFS).transpose(2, 1, 0, 3)
        if has_wm:
            raw = fh.read(n_vox * 4)
            if len(raw) < n_vox * 4:
                raise FormatError("truncated FOF wm map at byte offset %d"
                                  % (_FOF_HEAD.size + want + len(raw)))
            wm = np.frombuffer(raw, dtype="<f4").reshape(
                nz, ny, nx).transpose(2, 1, 0)
        else:
            wm = np.ones((nx, ny, nz))
    return FodfField(np.array(coeffs, float), np.array(wm, float),
                     np.array([sx, sy, sz]), np.array([ox, oy, oz]))


def write_tsl(path, streamlines):
    """Text streamline format: header "TSL1 <count>", then per streamline
    "S <n> <reason>" and n lines "x y z" (%.6f, mm)."""
    lines = ["TSL1 %d" % len(streamlines)]
    for s in streamlines:
        lines.append("S %d %s" % (len(s.points), s.reason))
        for p in s.points:
            lines.append("%.6f %.6f %.6f" % tuple(p))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _tsl_fail(msg, offset):
    raise FormatError("%s at byte offset %d" % (msg, offset))


def read_tsl(path):
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    out = []
    lines = data.split(b"\n")
    it = iter(lines)

    def next_line():
        nonlocal offset
        try:
            line = next(it)
        except StopIteration:
            _tsl_fail("unexpected end of TSL file", offset)
        start = offset
        offset += len(line) + 1
        return line, start

    header, at = next_line()
    parts = header.split()
    if len(parts) != 2 or parts[0] != b"TSL1":
        _tsl_fail("bad TSL header", at)
    try:
        count = int(parts[1])
    except ValueError:
        _tsl_fail("bad TSL streamline count", at)
    for _ in range(count):
        line, at = next_line()
        parts = line.split()
        if len(parts) != 3 or parts[0] != b"S":
            _tsl_fail("bad TSL streamline header", at)
        try:
            n = int(parts[1])
        except ValueError:
            _tsl_fail("bad TSL point count", at)
        reason = parts[2].decode("ascii", "replace")
        if reason not in TERMINATION_REASONS:
            _tsl_fail("unknown termination reason %r" % reason, at)
        pts = np.empty((n, 3))
        for i in range(n):
            line, at = next_line()
            vals = line.split()
            if len(vals) != 3:
                _tsl_fail("bad TSL vertex", at)
            try:
                pts[i] = [float(v) for v in vals]
            except ValueError:
                _tsl_fail("bad TSL vertex", at)
        out.append(Streamline(pts, reason))
    return out


def write_seeds(path, seeds):
    """One seed per line: "x y z dx dy dz", %.6f."""
    with open(path, "w") as fh:
        for s in seeds:
            fh.write("%.6f %.6f %.6f %.6f %.6f %.6f\n"
                     % (*s.position, *s.direction))


def read_seeds(path):
    with open(path, "rb") as fh:
        data = fh.read()
    seeds = []
    offset = 0
    for line in data.split(b"\n"):
        stripped = line.strip()
        if stripped:
            vals = stripped.split()
            ok = len(vals) == 6
            if ok:
                try:
                    vals = [float(v) for v in vals]
                except ValueError:
                    ok = False
            if not ok:
                raise FormatError("bad seed line at byte offset %d" % offset)
            seeds.append(Seed(vals[:3], vals[3:]))
        offset += len(line) + 1
    return seeds
