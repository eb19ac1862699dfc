"""Netpbm (PGM/PPM) and PFM readers/writers, residual images, and
synthetic pair generation.

Intensities are scaled to ``[0, 1]`` by ``maxval`` on read. Depth maps are
metres: PFM values as stored, 16-bit PGM values as millimetres.
"""

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import camera, lie, sampler
from .camera import CameraIntrinsics

_WS = b" \t\r\n\v\f"


class ImageParseError(ValueError):
    def __init__(self, message, offset, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")
        self.offset = offset
        self.path = path


def _header_tokens(data, count, path):
    """Read ``count`` whitespace-separated header tokens after the magic.

    Returns ``(tokens, offset)`` with ``offset`` just past the single
    whitespace byte that ends the header.
    """
    pos = 2
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WS:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise ImageParseError("truncated header", pos, path)
        tok = data[start:pos]
        if not tok.isdigit():
            raise ImageParseError(f"expected an integer, got {tok[:16]!r}", start, path)
        tokens.append(int(tok))
    if pos >= n or data[pos] not in _WS:
        raise ImageParseError("missing whitespace after header", pos, path)
    return tokens, pos + 1


def parse_netpbm(data, path=None):
    """Decode PGM/PPM bytes to ``(array, maxval)``; ``array`` holds raw
    integer sample values as float64, shape ``(H, W)`` or ``(H, W, 3)``."""
    if len(data) < 2:
        raise ImageParseError("empty or truncated file", 0, path)
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageParseError(f"unsupported magic {magic!r}", 0, path)
    (width, height, maxval), offset = _header_tokens(data, 3, path)
    if width < 1 or height < 1:
        raise ImageParseError(f"bad dimensions {width}x{height}", offset, path)
    if not 0 < maxval < 65536:
        raise ImageParseError(f"maxval {maxval} out of range", offset, path)
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        expected = count * dtype.itemsize
        payload = data[offset:]
        if len(payload) != expected:
            raise ImageParseError(
                f"payload is {len(payload)} bytes, header declares {expected}", offset, path
            )
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        text = data[offset:]
        toks = re.sub(rb"#[^\r\n]*", b" ", text).split()
        if len(toks) != count:
            raise ImageParseError(f"found {len(toks)} samples, header declares {count}", offset, path)
        try:
            values = np.array([int(t) for t in toks], dtype=np.float64)
        except ValueError as exc:
            raise ImageParseError(f"non-integer sample: {exc}", offset, path) from None
    if np.any(values > maxval):
        raise ImageParseError("sample exceeds maxval", offset, path)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return values.reshape(shape), maxval


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_image(path):
    """PGM to ``(H, W)`` or PPM to ``(H, W, 3)``, scaled to ``[0, 1]``."""
    values, maxval = parse_netpbm(_read_bytes(path), str(path))
    return values / maxval


def parse_pfm(data, path=None):
    """Decode PFM bytes to float64 ``(H, W)`` (``Pf``) or ``(H, W, 3)`` (``PF``).

    Rows are stored bottom-to-top; a negative scale means little-endian.
    """
    if len(data) < 2 or data[:2] not in (b"Pf", b"PF"):
        raise ImageParseError(f"unsupported magic {data[:2]!r}", 0, path)
    channels = 3 if data[:2] == b"PF" else 1
    m = re.match(rb"P[fF]\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if m is None:
        raise ImageParseError("malformed PFM header", 2, path)
    width, height = int(m.group(1)), int(m.group(2))
    try:
        scale = float(m.group(3))
    except ValueError:
        raise ImageParseError("bad PFM scale", m.start(3), path) from None
    if width < 1 or height < 1 or scale == 0:
        raise ImageParseError("bad PFM dimensions or scale", m.end(), path)
    offset = m.end()
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * channels * 4
    payload = data[offset:]
    if len(payload) != expected:
        raise ImageParseError(f"payload is {len(payload)} bytes, header declares {expected}", offset, path)
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape)[::-1].copy()


def read_depth(path):
    """Depth map in metres; invalid (non-positive or non-finite) pixels are 0."""
    data = _read_bytes(path)
    if data[:2] in (b"Pf", b"PF"):
        d = parse_pfm(data, str(path))
        if d.ndim == 3:
            d = d[..., 0]
    else:
        values, maxval = parse_netpbm(data, str(path))
        if values.ndim != 2:
            raise ImageParseError("depth PGM must be single channel", 0, str(path))
        d = values / 1000.0
    return np.where(np.isfinite(d) & (d > 0), d, 0.0)


def encode_netpbm(grid, maxval=255):
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim == 3 and g.shape[2] == 1:
        g = g[..., 0]
    if g.ndim == 2:
        magic = b"P5"
    elif g.ndim == 3 and g.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {g.shape} as PGM/PPM")
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} out of range")
    q = np.rint(np.clip(np.nan_to_num(g), 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, g.shape[1], g.shape[0], maxval)
    return header + q.astype(dtype).tobytes()


def encode_pfm(grid):
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("PFM writer takes a single-channel grid")
    header = b"Pf\n%d %d\n-1.0\n" % (g.shape[1], g.shape[0])
    return header + g[::-1].astype("<f4").tobytes()


def _write(path, payload):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_image(grid, path, maxval=255):
    """Write a ``[0, 1]`` grid as binary PGM (2D) or PPM (3 channels)."""
    _write(path, encode_netpbm(grid, maxval))


def write_depth(depth, path):
    if str(path).lower().endswith((".pgm", ".png")):
        mm = np.rint(np.clip(np.asarray(depth) * 1000.0, 0, 65535))
        _write(path, encode_netpbm(mm / 65535.0, 65535))
    else:
        _write(path, encode_pfm(depth))


def residual_image(residuals, mask):
    """``|r|`` clipped to ``[0, 1]`` (intensity units), 0 where masked."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim == 3:
        r = np.sqrt(np.mean(r * r, axis=-1))
    return np.where(np.asarray(mask) > 0, np.clip(np.abs(r), 0.0, 1.0), 0.0)


def write_residual(residuals, mask, path, maxval=255):
    write_image(residual_image(residuals, mask), path, maxval)


def parse_pose(text):
    """Six floats ``v1 v2 v3 t1 t2 t3``, or a path to a file holding them."""
    if os.path.isfile(text):
        text = Path(text).read_text()
    vals = [float(t) for t in text.replace(",", " ").split()]
    if len(vals) != 6:
        raise ValueError(f"pose needs 6 numbers 'v1 v2 v3 t1 t2 t3', got {len(vals)}")
    return np.array(vals)


def format_pose(pose):
    return " ".join(repr(float(x)) for x in pose)


def parse_intrinsics(text):
    if os.path.isfile(text):
        text = Path(text).read_text()
    return CameraIntrinsics.from_string(text)


def warp_image(image, depth, pose, K):
    """Sample ``image`` at ``pi(T p_hat(x))`` for every pixel, lifting
    pixels with ``depth``. Returns ``(warped, mask)``."""
    T = lie.se3_forward(pose)
    points, valid_depth = camera.grid_generator_3d(depth, K, T)
    pix, valid_w = camera.project_points(points, K)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        warped, mask = sampler.bilinear_sample(img, pix)
    else:
        warped, mask = sampler.warp_multichannel(img, pix)
    mask = mask * valid_depth * valid_w
    warped = warped * (mask[..., None] if warped.ndim == 3 else mask)
    return warped, mask


@dataclass
class DatasetPair:
    """Files of one image pair. ``ground_truth_pose`` is the pose the live
    image was synthesised with, when known."""

    ref_image: str
    live_image: str
    intrinsics: CameraIntrinsics
    depth: str = None
    ground_truth_pose: np.ndarray = None

    def load(self):
        ref = read_image(self.ref_image)
        live = read_image(self.live_image)
        depth = read_depth(self.depth) if self.depth else None
        if ref.shape != live.shape or (depth is not None and depth.shape != ref.shape[:2]):
            raise ValueError("dataset images and depth disagree in shape")
        return ref, live, depth


@dataclass
class SyntheticPair:
    """A rendered view (``ref``) of the scene ``depth`` describes, the base
    image it was resampled from (``live``), the validity of the rendering
    and the pose relating them: ``live(pi(T p_hat_depth(x))) == ref(x)``."""

    ref: np.ndarray
    live: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    K: CameraIntrinsics
    pose: np.ndarray

    def save(self, out_dir, maxval=255):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ext = ".ppm" if np.ndim(self.ref) == 3 else ".pgm"
        write_image(self.ref, out / f"ref{ext}", maxval)
        write_image(self.live, out / f"live{ext}", maxval)
        write_image(self.mask, out / "ref_mask.pgm", 255)
        write_depth(self.depth, out / "depth.pfm")
        (out / "intrinsics.txt").write_text(self.K.to_string() + "\n")
        (out / "pose.txt").write_text(format_pose(self.pose) + "\n")
        return DatasetPair(str(out / f"ref{ext}"), str(out / f"live{ext}"), self.K,
                           str(out / "depth.pfm"), np.array(self.pose))


class SynthesisError(ValueError):
    pass


def synth_pair(base_image, base_depth, pose, K, seed=0, noise=0.0, min_overlap=0.1):
    """Render a new view by warping ``base_image`` through the layer chain.

    The new view is ``base(pi(T p_hat(x)))`` with ``p_hat`` lifted by
    ``base_depth``, so ``base_depth`` is that view's depth map and the
    returned pair aligns exactly at ``pose``: ``ref`` is the new view,
    ``live`` the base image. Pixels the warp leaves invalid get depth 0.
    Optional Gaussian noise of standard deviation ``noise`` is added to the
    new view from a generator seeded by ``seed``.
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (6,) or not np.all(np.isfinite(pose)):
        raise ValueError("pose must be 6 finite numbers")
    view, mask = warp_image(base_image, base_depth, pose, K)
    frac = float(mask.mean())
    if frac < min_overlap:
        raise SynthesisError(
            f"pose leaves only {frac:.1%} of pixels valid (need {min_overlap:.0%})"
        )
    if noise > 0:
        rng = np.random.default_rng(seed)
        view = view + rng.normal(0.0, noise, size=view.shape) * (
            mask[..., None] if view.ndim == 3 else mask
        )
    depth = np.where(mask > 0, np.asarray(base_depth, dtype=np.float64), 0.0)
    return SyntheticPair(view, np.asarray(base_image, dtype=np.float64), depth, mask, K, pose)
