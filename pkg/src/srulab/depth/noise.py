"""Batched stereo depth noise: edge, filling and rounding noise in disparity space.

Pipeline per image::

    disp   = f*b / depth
    rho    ~ U[rho_min, rho_max];  R = Bernoulli(rho) per pixel
    m      = disp (x) K_mean                       (replicate-padded borders)
    tau    ~ U[tau_min, tau_max]
    M      = (|disp - m| < tau) & R
    masked = quantize(disp) where M else invalid_disp
    num    = masked (x) K_sub,  den = M (x) K_sub + eps   (zero outside the image)
    filled = num / den where den > eps else masked
    depth' = f*b / filled

``(x)`` is 2-D cross-correlation. Random draws per image, in order: rho,
then the Bernoulli uniforms row-major, then tau. Correlations accumulate
window offsets row-major so the vectorized path and the per-pixel
reference perform identical floating-point operations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

INVALID_DEPTH = 0.0


@dataclass
class NoiseConfig:
    f: float = 380.0  # focal length, pixels
    b: float = 0.12  # stereo baseline, meters
    filt_size: int = 3
    tau_min: float = 0.2
    tau_max: float = 1.0
    rho_min: float = 0.8
    rho_max: float = 1.0
    invalid_disp: float = 0.0
    quant_step: float = 0.125
    eps: float = 1e-20
    d_min: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.rho_min <= self.rho_max <= 1.0:
            raise ValueError(f"need 0 <= rho_min <= rho_max <= 1, got [{self.rho_min}, {self.rho_max}]")
        if not 0.0 <= self.tau_min <= self.tau_max:
            raise ValueError(f"need 0 <= tau_min <= tau_max, got [{self.tau_min}, {self.tau_max}]")
        if int(self.filt_size) != self.filt_size or self.filt_size < 1 or self.filt_size % 2 == 0:
            raise ValueError(f"filt_size must be an odd integer >= 1, got {self.filt_size}")
        if not self.quant_step > 0:
            raise ValueError(f"quant_step must be > 0, got {self.quant_step}")
        if not (self.f > 0 and self.b > 0 and self.d_min > 0):
            raise ValueError("f, b and d_min must be positive")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown noise config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "NoiseConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Kernels:
    mean: np.ndarray
    sub: np.ndarray


def compute_kernels(filt_size: int) -> Kernels:
    if int(filt_size) != filt_size or filt_size < 1 or filt_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {filt_size}")
    s = int(filt_size)
    return Kernels(np.full((s, s), 1.0 / (s * s)), np.ones((s, s)))


def depth_to_disparity(depth, f: float, b: float, d_min: float = 0.05) -> np.ndarray:
    return f * b / np.maximum(np.asarray(depth, dtype=np.float64), d_min)


def disparity_to_depth(disp, f: float, b: float) -> np.ndarray:
    return f * b / np.asarray(disp, dtype=np.float64)


def quantize(disp, quant_step: float):
    """Round to the nearest multiple of ``quant_step``, ties to even."""
    if not quant_step > 0:
        raise ValueError(f"quant_step must be > 0, got {quant_step}")
    return np.round(np.asarray(disp, dtype=np.float64) / quant_step) * quant_step


def correlate2d(img: np.ndarray, kernel: np.ndarray, pad: str) -> np.ndarray:
    """Same-size cross-correlation over the last two axes.

    ``pad`` is ``"edge"`` (replicate) or ``"zero"``. Offsets are accumulated
    row-major, one multiply and one add each.
    """
    s = kernel.shape[0]
    r = s // 2
    H, W = img.shape[-2:]
    width = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(img, width, mode="edge" if pad == "edge" else "constant")
    acc = np.zeros(img.shape)
    for dy in range(s):
        for dx in range(s):
            acc = acc + kernel[dy, dx] * padded[..., dy:dy + H, dx:dx + W]
    return acc


def _streams(rng, n: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"need {n} per-image generators, got {len(rngs)}")
    return rngs


def filter_disparity(disp: np.ndarray, kernels: Kernels, config: NoiseConfig, rng,
                     valid: np.ndarray | None = None) -> np.ndarray:
    """Apply edge/filling/rounding noise to a (B, H, W) disparity batch.

    ``rng`` is one Generator consumed image by image, or a sequence of one
    Generator per image. ``valid`` optionally excludes pixels from matching.
    """
    disp = np.asarray(disp, dtype=np.float64)
    if disp.ndim != 3:
        raise ValueError(f"expected (B, H, W) disparity, got shape {disp.shape}")
    B, H, W = disp.shape
    streams = _streams(rng, B)
    R = np.empty(disp.shape, dtype=bool)
    tau = np.empty(B)
    for n in range(B):
        g = streams[n]
        rho = g.uniform(config.rho_min, config.rho_max)
        R[n] = g.random((H, W)) < rho
        tau[n] = g.uniform(config.tau_min, config.tau_max)
    m = correlate2d(disp, kernels.mean, "edge")
    M = (np.abs(disp - m) < tau[:, None, None]) & R
    if valid is not None:
        M &= valid
    v = quantize(disp, config.quant_step)
    masked = np.where(M, v, config.invalid_disp)
    num = correlate2d(np.where(M, v, 0.0), kernels.sub, "zero")
    den = correlate2d(M.astype(np.float64), kernels.sub, "zero") + config.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > config.eps, num / den, masked)


def image_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-image generators derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _input_disparity(depth: np.ndarray, config: NoiseConfig):
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    safe = np.where(valid, depth, 1.0)
    disp = np.where(valid, depth_to_disparity(safe, config.f, config.b, config.d_min), config.invalid_disp)
    return disp, valid


def _output_depth(filtered: np.ndarray, config: NoiseConfig) -> np.ndarray:
    bad = (filtered == config.invalid_disp) | ~(filtered > 0)
    with np.errstate(divide="ignore"):
        return np.where(bad, INVALID_DEPTH, config.f * config.b / np.where(bad, 1.0, filtered))


def _as_batch(depth):
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        return depth[None], True
    if depth.ndim != 3:
        raise ValueError(f"expected (H, W) or (B, H, W) depth, got shape {depth.shape}")
    return depth, False


def apply_noise(depth, config: NoiseConfig, rng=None) -> np.ndarray:
    """Noisy copy of a depth batch; dropped pixels become ``INVALID_DEPTH``.

    Without ``rng`` each image draws from its own stream of ``config.seed``.
    """
    batch, single = _as_batch(depth)
    _check_size(batch, config)
    kernels = compute_kernels(config.filt_size)
    disp, valid = _input_disparity(batch, config)
    streams = rng if rng is not None else image_streams(config.seed, batch.shape[0])
    out = _output_depth(filter_disparity(disp, kernels, config, streams, valid), config)
    return out[0] if single else out


def _check_size(batch: np.ndarray, config: NoiseConfig) -> None:
    if min(batch.shape[-2:]) < config.filt_size:
        raise ValueError(f"image {batch.shape[-2:]} smaller than filter size {config.filt_size}")


# ---------------------------------------------------------------------------
# per-pixel verification twin


def _ref_correlate_at(img, kernel, y, x, pad):
    s = kernel.shape[0]
    r = s // 2
    H, W = len(img), len(img[0])
    acc = 0.0
    for dy in range(s):
        for dx in range(s):
            yy, xx = y + dy - r, x + dx - r
            if pad == "edge":
                val = img[min(max(yy, 0), H - 1)][min(max(xx, 0), W - 1)]
            elif 0 <= yy < H and 0 <= xx < W:
                val = img[yy][xx]
            else:
                val = 0.0
            acc = acc + float(kernel[dy, dx]) * val
    return acc


def reference_oracle(depth, config: NoiseConfig, rng=None) -> np.ndarray:
    """Unvectorized per-pixel implementation consuming the same random streams."""
    batch, single = _as_batch(depth)
    _check_size(batch, config)
    B, H, W = batch.shape
    kernels = compute_kernels(config.filt_size)
    streams = _streams(rng if rng is not None else image_streams(config.seed, B), B)
    fb = config.f * config.b
    out = np.empty(batch.shape)
    for n in range(B):
        g = streams[n]
        disp = [[0.0] * W for _ in range(H)]
        valid = [[False] * W for _ in range(H)]
        for y in range(H):
            for x in range(W):
                d = float(batch[n, y, x])
                if np.isfinite(d) and d > 0:
                    valid[y][x] = True
                    disp[y][x] = fb / max(d, config.d_min)
                else:
                    disp[y][x] = config.invalid_disp
        rho = g.uniform(config.rho_min, config.rho_max)
        keep = [[g.random() < rho for x in range(W)] for y in range(H)]
        tau = g.uniform(config.tau_min, config.tau_max)
        M = [[False] * W for _ in range(H)]
        v = [[0.0] * W for _ in range(H)]
        for y in range(H):
            for x in range(W):
                m = _ref_correlate_at(disp, kernels.mean, y, x, "edge")
                M[y][x] = abs(disp[y][x] - m) < tau and keep[y][x] and valid[y][x]
                v[y][x] = round(disp[y][x] / config.quant_step) * config.quant_step
        contrib = [[v[y][x] if M[y][x] else 0.0 for x in range(W)] for y in range(H)]
        ones = [[1.0 if M[y][x] else 0.0 for x in range(W)] for y in range(H)]
        for y in range(H):
            for x in range(W):
                num = _ref_correlate_at(contrib, kernels.sub, y, x, "zero")
                den = _ref_correlate_at(ones, kernels.sub, y, x, "zero") + config.eps
                filled = num / den if den > config.eps else (v[y][x] if M[y][x] else config.invalid_disp)
                if filled == config.invalid_disp or not filled > 0:
                    out[n, y, x] = INVALID_DEPTH
                else:
                    out[n, y, x] = fb / filled
    return out[0] if single else out


def invalid_fraction(depth: np.ndarray) -> float:
    return float(np.mean(np.asarray(depth) == INVALID_DEPTH))


def load_config(path_or_dict: str | Path | dict | None) -> NoiseConfig:
    if path_or_dict is None:
        return NoiseConfig()
    if isinstance(path_or_dict, dict):
        return NoiseConfig.from_dict(path_or_dict)
    return NoiseConfig.from_json(path_or_dict)


def stack_images(images: Sequence[np.ndarray]) -> np.ndarray:
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images in a batch must share a shape, got {sorted(shapes)}")
    return np.stack(images)
