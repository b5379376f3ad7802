"""Depth image files: grayscale PFM (float32) and 16-bit PGM (millimeters)."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

PGM_SCALE = 1000.0  # stored value = depth in meters * PGM_SCALE


class ImageFormatError(ValueError):
    """Malformed image file; the message carries the byte offset of the problem."""

    def __init__(self, path, offset: int, msg: str):
        super().__init__(f"{path}: byte {offset}: {msg}")
        self.offset = offset


_TOKEN = re.compile(rb"\S+")


def _header_tokens(buf: bytes, count: int, path, start: int = 0):
    """Read ``count`` whitespace-separated tokens (PNM '#' comments skipped)."""
    pos = start
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
            continue
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ImageFormatError(path, pos, "truncated header")
        out.append((m.group(), pos))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError(path, pos, "header must end with a single whitespace byte")
    return out, pos + 1


def _int_token(tok, path) -> int:
    text, off = tok
    try:
        value = int(text)
    except ValueError:
        raise ImageFormatError(path, off, f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise ImageFormatError(path, off, f"dimension must be positive, got {value}")
    return value


def read_pfm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic == b"PF":
        raise ImageFormatError(path, 0, "color PFM ('PF') not supported; expected grayscale 'Pf'")
    if magic != b"Pf":
        raise ImageFormatError(path, 0, f"bad magic {magic!r}; expected 'Pf'")
    (w_tok, h_tok, s_tok), data_start = _header_tokens(buf, 3, path, 2)
    W, H = _int_token(w_tok, path), _int_token(h_tok, path)
    try:
        scale = float(s_tok[0])
    except ValueError:
        raise ImageFormatError(path, s_tok[1], f"bad scale {s_tok[0]!r}") from None
    if scale == 0:
        raise ImageFormatError(path, s_tok[1], "scale must be nonzero")
    dtype = "<f4" if scale < 0 else ">f4"
    need = W * H * 4
    if len(buf) - data_start < need:
        raise ImageFormatError(path, len(buf), f"raster truncated: need {need} bytes after offset {data_start}")
    img = np.frombuffer(buf, dtype=dtype, count=W * H, offset=data_start).reshape(H, W)
    # rows are stored bottom to top
    return img[::-1].astype(np.float64)


def write_pfm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PFM holds one grayscale image, got shape {img.shape}")
    H, W = img.shape
    header = f"Pf\n{W} {H}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pgm(path: str | Path, scale: float = PGM_SCALE) -> np.ndarray:
    """16-bit binary PGM -> depth in meters (0 stays 0, the invalid marker)."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ImageFormatError(path, 0, f"bad magic {buf[:2]!r}; expected 'P5'")
    (w_tok, h_tok, max_tok), data_start = _header_tokens(buf, 3, path, 2)
    W, H, maxval = _int_token(w_tok, path), _int_token(h_tok, path), _int_token(max_tok, path)
    if maxval > 65535:
        raise ImageFormatError(path, max_tok[1], f"maxval {maxval} exceeds 16 bits")
    dtype = ">u2" if maxval > 255 else "u1"
    itemsize = 2 if maxval > 255 else 1
    need = W * H * itemsize
    if len(buf) - data_start < need:
        raise ImageFormatError(path, len(buf), f"raster truncated: need {need} bytes after offset {data_start}")
    raw = np.frombuffer(buf, dtype=dtype, count=W * H, offset=data_start).reshape(H, W)
    return raw.astype(np.float64) / scale


def write_pgm(path: str | Path, depth: np.ndarray, scale: float = PGM_SCALE) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"PGM holds one grayscale image, got shape {depth.shape}")
    raw = np.round(np.clip(np.nan_to_num(depth * scale, nan=0.0, posinf=0.0), 0, 65535)).astype(">u2")
    H, W = depth.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n65535\n".encode("ascii") + raw.tobytes())


def read_depth(path: str | Path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".pgm":
        return read_pgm(path)
    raise ValueError(f"unsupported depth image type {suffix!r} (expected .pfm or .pgm)")


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, depth)
    elif suffix == ".pgm":
        write_pgm(path, depth)
    else:
        raise ValueError(f"unsupported depth image type {suffix!r} (expected .pfm or .pgm)")
