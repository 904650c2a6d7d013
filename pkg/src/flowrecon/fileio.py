"""File formats: PGM/PNG grayscale images, Middlebury .flo fields, PPM flow maps.

All writes go through a temporary file in the target directory followed by
an atomic rename, so interrupted runs never leave corrupt outputs.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .model import FlowField, SolveConfig

FLO_TAG = 202021.25


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_pgm(data: bytes):
    # header tokens may be separated by whitespace and '#' comments
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                nl = data.find(b"\n", pos)
                if nl < 0:
                    raise ValueError("malformed PGM header: unterminated comment")
                pos = nl + 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("malformed PGM header: truncated")
        return data[start:pos]

    magic = token()
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"unsupported PGM magic {magic!r}")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if width < 1 or height < 1:
        raise ValueError("malformed PGM header: bad dimensions")
    if not 0 < maxval < 65536:
        raise ValueError(f"unsupported PGM depth (maxval {maxval})")
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise ValueError("truncated PGM data")
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array([int(token()) for _ in range(count)], dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"truncated or malformed P2 data: {exc}") from exc
    return values.reshape(height, width) / maxval


def read_image(path) -> np.ndarray:
    """Decode an 8- or 16-bit grayscale PGM or PNG into intensities in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return _parse_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n" or path.suffix.lower() == ".png":
        img = PILImage.open(path)
        if img.mode == "L":
            return np.asarray(img, dtype=np.float64) / 255.0
        if img.mode in ("I;16", "I;16B", "I"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        raise ValueError(f"unsupported PNG mode {img.mode!r}; convert to grayscale first")
    raise ValueError(f"unrecognized image format in {path}")


def write_image(path, image, *, bit_depth: int = 16, ascii_pgm: bool = False):
    """Write a [0, 1] image as PGM (P5, or P2 with ascii_pgm) or PNG by extension.

    Values are clipped to [0, 1] and quantized; a 16-bit write-then-read
    roundtrip is exact to within one quantization step.
    """
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    maxval = 255 if bit_depth == 8 else 65535
    quant = np.clip(np.rint(np.clip(image, 0.0, 1.0) * maxval), 0, maxval)
    height, width = image.shape

    if path.suffix.lower() == ".png":
        if bit_depth == 8:
            pil = PILImage.fromarray(quant.astype(np.uint8), mode="L")
        else:
            pil = PILImage.fromarray(quant.astype(np.uint16))
        import io

        buf = io.BytesIO()
        pil.save(buf, format="PNG")
        _atomic_write(path, buf.getvalue())
        return

    header = f"P2 {width} {height} {maxval}\n" if ascii_pgm else f"P5 {width} {height} {maxval}\n"
    if ascii_pgm:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in quant)
        _atomic_write(path, header.encode() + body.encode() + b"\n")
    else:
        dtype = np.dtype("u1") if bit_depth == 8 else np.dtype(">u2")
        _atomic_write(path, header.encode() + quant.astype(dtype).tobytes())


def read_flo(path) -> FlowField:
    """Read a Middlebury .flo file (little-endian, sanity tag 202021.25)."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError("truncated .flo file")
    tag, width, height = struct.unpack("<fii", data[:12])
    if tag != FLO_TAG:
        raise ValueError(f"bad .flo tag {tag!r} (expected {FLO_TAG})")
    if width < 1 or height < 1:
        raise ValueError(f"bad .flo dimensions {width}x{height}")
    expected = 12 + width * height * 8
    if len(data) < expected:
        raise ValueError(f".flo size mismatch: have {len(data)} bytes, need {expected}")
    values = np.frombuffer(data[12:expected], dtype="<f4").reshape(height, width, 2)
    return FlowField(values[:, :, 0].astype(np.float64), values[:, :, 1].astype(np.float64))


def write_flo(path, flow: FlowField):
    """Write a Middlebury .flo file; float32 roundtrips are bit-identical."""
    height, width = flow.shape
    interleaved = np.empty((height, width, 2), dtype="<f4")
    interleaved[:, :, 0] = flow.v1
    interleaved[:, :, 1] = flow.v2
    _atomic_write(path, struct.pack("<fii", FLO_TAG, width, height) + interleaved.tobytes())


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV to RGB, all channels in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_hsv(flow: FlowField, max_mag=None):
    """Hue from direction, saturation from magnitude; invalid pixels get value 0."""
    from .metrics import flow_valid_mask

    valid = flow_valid_mask(flow)
    mag = np.where(valid, flow.magnitude(), 0.0)
    if max_mag is None:
        max_mag = float(np.percentile(mag[valid], 99)) if valid.any() else 1.0
    max_mag = max(max_mag, 1e-9)
    hue = (np.arctan2(flow.v2, flow.v1) / (2.0 * np.pi)) % 1.0
    sat = np.minimum(1.0, mag / max_mag)
    val = np.where(valid, 1.0, 0.0)
    return hue, sat, val


def flow_to_color(flow: FlowField, max_mag=None) -> np.ndarray:
    """Render a flow field as an (H, W, 3) uint8 color-wheel image."""
    hue, sat, val = flow_hsv(flow, max_mag)
    rgb = _hsv_to_rgb(hue, sat, val)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb):
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    height, width = rgb.shape[:2]
    _atomic_write(path, f"P6 {width} {height} 255\n".encode() + rgb.tobytes())


def config_to_json(cfg: SolveConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def config_from_dict(d: dict) -> SolveConfig:
    known = set(SolveConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return SolveConfig(**d)


def _coerce(text: str):
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    if low.lower() in ("null", "none"):
        return None
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        return low


def load_config_file(path) -> SolveConfig:
    """Load a SolveConfig from JSON or key=value lines; dumps round-trip."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return config_from_dict(json.loads(text))
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = _coerce(val)
    return config_from_dict(values)
