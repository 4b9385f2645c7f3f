"""On-disk formats: the pyramid/params binary containers, PFM depth maps,
PGM masks, and PLY point clouds.

All writers are atomic (temp file + rename) and little-endian canonical.
Parsers validate sizes before allocating and raise FormatError with the
byte offset of the problem; they never crash on malformed input.
"""

from __future__ import annotations

import os
import re
import struct
import tempfile

import numpy as np

from .errors import FormatError, ShapeError
from .field import DecoderParams, FeatureLevel, FeaturePyramid, FusionStage, MlpHead
from .metrics import DepthMap

PYRAMID_MAGIC = b"IDFP"
PARAMS_MAGIC = b"IDFW"
FORMAT_VERSION = 1
PFM_INVALID = -1.0


def atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Bounds-checked little-endian cursor over a byte buffer."""

    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if n < 0 or self.off + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", offset=self.off)
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32s(self, count, what):
        need = count * 4
        raw = self.take(need, what)
        return np.frombuffer(raw, dtype="<f4", count=count)

    def done(self, what):
        if self.off != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.off} trailing bytes after {what}",
                              offset=self.off)


# ---------------------------------------------------------------------------
# pyramid container


def write_pyramid(pyramid, path):
    parts = [PYRAMID_MAGIC, struct.pack("<IIII", FORMAT_VERSION,
                                        pyramid.image_width, pyramid.image_height,
                                        len(pyramid.levels))]
    for lv in pyramid.levels:
        parts.append(struct.pack("<III", lv.height, lv.width, lv.channels))
        parts.append(np.ascontiguousarray(lv.data, dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


def read_pyramid(path):
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4, "magic") != PYRAMID_MAGIC:
        raise FormatError("bad pyramid magic (expected IDFP)", offset=0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported pyramid version {version}", offset=4)
    w = r.u32("image width")
    h = r.u32("image height")
    n_levels = r.u32("level count")
    if w == 0 or h == 0:
        raise FormatError("image dimensions must be positive", offset=8)
    if n_levels == 0 or n_levels > 64:
        raise FormatError(f"implausible level count {n_levels}", offset=16)
    levels = []
    for k in range(n_levels):
        hdr_off = r.off
        lh = r.u32(f"level {k} height")
        lw = r.u32(f"level {k} width")
        lc = r.u32(f"level {k} channels")
        count = lh * lw * lc
        if lh < 2 or lw < 2 or lc < 1:
            raise FormatError(f"level {k} has invalid dims {lh}x{lw}x{lc}", offset=hdr_off)
        if count * 4 > len(buf) - r.off:
            raise FormatError(f"level {k} data exceeds file size", offset=r.off)
        data = r.f32s(count, f"level {k} data").reshape(lh, lw, lc)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"level {k} contains non-finite values", offset=hdr_off)
        levels.append(FeatureLevel(data.copy()))
    r.done("pyramid")
    try:
        return FeaturePyramid(tuple(levels), w, h)
    except ShapeError as e:
        raise FormatError(str(e), offset=16) from e


# ---------------------------------------------------------------------------
# decoder params container


def _pack_block(w, b):
    rows, cols = w.shape
    return b"".join([
        struct.pack("<II", rows, cols),
        np.ascontiguousarray(w, dtype="<f4").tobytes(),
        struct.pack("<I", b.shape[0]),
        np.ascontiguousarray(b, dtype="<f4").tobytes(),
    ])


def _read_block(r, what):
    rows = r.u32(f"{what} rows")
    cols = r.u32(f"{what} cols")
    if rows == 0 or cols == 0 or rows > 1 << 20 or cols > 1 << 20:
        raise FormatError(f"implausible {what} shape {rows}x{cols}", offset=r.off - 8)
    if rows * cols * 4 > len(r.buf) - r.off:
        raise FormatError(f"{what} matrix exceeds file size", offset=r.off)
    w = r.f32s(rows * cols, f"{what} matrix").reshape(rows, cols)
    blen = r.u32(f"{what} bias length")
    if blen * 4 > len(r.buf) - r.off:
        raise FormatError(f"{what} bias exceeds file size", offset=r.off)
    b = r.f32s(blen, f"{what} bias")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise FormatError(f"{what} contains non-finite values", offset=r.off)
    return np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)


def write_params(params, path):
    parts = [PARAMS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.stages))]
    for st in params.stages:
        parts.append(struct.pack("<I", st.gate_raw.shape[0]))
        parts.append(np.ascontiguousarray(st.gate_raw, dtype="<f4").tobytes())
        parts.append(_pack_block(st.proj_w, st.proj_b))
        parts.append(_pack_block(st.ffn_w1, st.ffn_b1))
        parts.append(_pack_block(st.ffn_w2, st.ffn_b2))
    hd = params.head
    parts.append(_pack_block(hd.w1, hd.b1))
    parts.append(_pack_block(hd.w2, hd.b2))
    parts.append(_pack_block(hd.w3, hd.b3))
    atomic_write(path, b"".join(parts))


def read_params(path):
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4, "magic") != PARAMS_MAGIC:
        raise FormatError("bad params magic (expected IDFW)", offset=0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported params version {version}", offset=4)
    n_stages = r.u32("stage count")
    if n_stages > 64:
        raise FormatError(f"implausible stage count {n_stages}", offset=8)
    stages = []
    for k in range(n_stages):
        glen = r.u32(f"stage {k} gate length")
        if glen == 0 or glen * 4 > len(buf) - r.off:
            raise FormatError(f"stage {k} gate exceeds file size", offset=r.off)
        gate = np.array(r.f32s(glen, f"stage {k} gate"), dtype=np.float64)
        if not np.all(np.isfinite(gate)):
            raise FormatError(f"stage {k} gate contains non-finite values", offset=r.off)
        pw, pb = _read_block(r, f"stage {k} proj")
        w1, b1 = _read_block(r, f"stage {k} ffn_w1")
        w2, b2 = _read_block(r, f"stage {k} ffn_w2")
        try:
            stages.append(FusionStage(gate, pw, pb, w1, b1, w2, b2))
        except ShapeError as e:
            raise FormatError(f"stage {k}: {e}", offset=r.off) from e
    hw1, hb1 = _read_block(r, "head layer 1")
    hw2, hb2 = _read_block(r, "head layer 2")
    hw3, hb3 = _read_block(r, "head layer 3")
    r.done("params")
    try:
        return DecoderParams(tuple(stages), MlpHead(hw1, hb1, hw2, hb2, hw3, hb3))
    except ShapeError as e:
        raise FormatError(str(e), offset=r.off) from e


# ---------------------------------------------------------------------------
# PFM (portable float map)


def write_pfm(depth_map, path):
    """Grayscale little-endian PFM; invalid pixels become the -1 sentinel."""
    vals = np.where(depth_map.validity, depth_map.values, PFM_INVALID).astype("<f4")
    header = f"Pf\n{depth_map.width} {depth_map.height}\n-1.0\n".encode("ascii")
    atomic_write(path, header + vals[::-1].tobytes())  # bottom-up rows


def write_pfm_color(values, path):
    """3-channel PFM (used for normal maps); no validity semantics."""
    vals = np.asarray(values, dtype="<f4")
    if vals.ndim != 3 or vals.shape[2] != 3:
        raise ShapeError("color PFM needs an (h, w, 3) array")
    header = f"PF\n{vals.shape[1]} {vals.shape[0]}\n-1.0\n".encode("ascii")
    atomic_write(path, header + vals[::-1].tobytes())


_TOKEN = re.compile(rb"\S+")


def _pfm_header(buf):
    """Parse the three header records; returns (w, h, scale, data offset)."""
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(buf):
        m = _TOKEN.search(buf, pos)
        if m is None:
            break
        tokens.append((m.group(0), m.start()))
        pos = m.end()
    if len(tokens) < 4:
        raise FormatError("incomplete PFM header", offset=pos)
    magic = tokens[0][0]
    if magic == b"PF":
        raise FormatError("color PFM not supported for depth maps", offset=0)
    if magic != b"Pf":
        raise FormatError("bad PFM magic (expected Pf)", offset=0)
    try:
        w = int(tokens[1][0])
        h = int(tokens[2][0])
        scale = float(tokens[3][0])
    except ValueError as e:
        raise FormatError(f"malformed PFM header field: {e}", offset=tokens[1][1]) from e
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid PFM dimensions {w}x{h}", offset=tokens[1][1])
    if scale == 0:
        raise FormatError("PFM scale must be nonzero", offset=tokens[3][1])
    # data begins after the single whitespace byte terminating the scale token
    data_off = tokens[3][1] + len(tokens[3][0]) + 1
    return w, h, scale, data_off


def read_pfm(path):
    """Read a grayscale PFM as a DepthMap (sentinel/nonpositive -> invalid)."""
    with open(path, "rb") as f:
        buf = f.read()
    w, h, scale, off = _pfm_header(buf)
    need = w * h * 4
    if off + need > len(buf):
        raise FormatError(f"PFM data truncated (need {need} bytes)", offset=off)
    dtype = "<f4" if scale < 0 else ">f4"
    vals = np.frombuffer(buf, dtype=dtype, count=w * h, offset=off)
    with np.errstate(invalid="ignore"):
        vals = vals.reshape(h, w)[::-1].astype(np.float64)
    if np.any(np.isnan(vals)):
        raise FormatError("PFM contains NaN samples", offset=off)
    validity = np.isfinite(vals) & (vals > 0) & (vals != PFM_INVALID)
    return DepthMap(vals, validity)


# ---------------------------------------------------------------------------
# PGM masks


def write_pgm(mask, path):
    mask = np.asarray(mask, dtype=bool)
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii")
    atomic_write(path, header + (mask.astype(np.uint8) * 255).tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        buf = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(buf):
        m = _TOKEN.search(buf, pos)
        if m is None:
            break
        tokens.append((m.group(0), m.start()))
        pos = m.end()
    if len(tokens) < 4 or tokens[0][0] != b"P5":
        raise FormatError("bad PGM header", offset=0)
    try:
        w, h, maxval = int(tokens[1][0]), int(tokens[2][0]), int(tokens[3][0])
    except ValueError as e:
        raise FormatError(f"malformed PGM header: {e}", offset=tokens[1][1]) from e
    if w <= 0 or h <= 0 or not (0 < maxval < 256):
        raise FormatError("invalid PGM dimensions or maxval", offset=tokens[1][1])
    off = tokens[3][1] + len(tokens[3][0]) + 1
    if off + w * h > len(buf):
        raise FormatError("PGM data truncated", offset=off)
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=off).reshape(h, w)
    return data > 0


# ---------------------------------------------------------------------------
# PLY point clouds


def write_ply(pc, path, binary=True):
    """PLY with x y z [nx ny nz] [red green blue], binary LE or ascii."""
    n = len(pc)
    lines = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0",
             f"element vertex {n}",
             "property float x", "property float y", "property float z"]
    if pc.normals is not None:
        lines += ["property float nx", "property float ny", "property float nz"]
    if pc.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    if binary:
        cols = [pc.points.astype("<f4")]
        if pc.normals is not None:
            cols.append(pc.normals.astype("<f4"))
        body = b""
        if n:
            float_part = np.concatenate(cols, axis=1)
            if pc.colors is not None:
                rec = np.zeros(n, dtype=[("f", "<f4", float_part.shape[1]), ("c", "u1", 3)])
                rec["f"] = float_part
                rec["c"] = pc.colors
                body = rec.tobytes()
            else:
                body = float_part.tobytes()
        atomic_write(path, header + body)
        return
    rows = []
    for i in range(n):
        parts = [f"{v:.9g}" for v in pc.points[i]]
        if pc.normals is not None:
            parts += [f"{v:.9g}" for v in pc.normals[i]]
        if pc.colors is not None:
            parts += [str(int(v)) for v in pc.colors[i]]
        rows.append(" ".join(parts))
    atomic_write(path, header + ("\n".join(rows) + ("\n" if rows else "")).encode("ascii"))
