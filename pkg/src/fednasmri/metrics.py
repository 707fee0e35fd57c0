"""Reconstruction quality, dispersion statistics and model size."""

import csv
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, DimensionError

SCENARIOS = ("in_distribution", "mask_shift", "acceleration_shift", "contrast_shift", "unseen_center")
RECORD_FIELDS = ("scenario", "client_id", "recon", "psnr", "ssim", "loss")


def magnitude(img):
    """Modulus of a ``[..., 2, H, W]`` (real, imag) array; real arrays pass through."""
    img = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if img.ndim >= 3 and img.shape[-3] == 2:
        return np.hypot(img[..., 0, :, :], img[..., 1, :, :])
    return img


def _pair(pred, ref):
    p, r = magnitude(pred), magnitude(ref)
    if p.shape != r.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {r.shape}")
    return p, r


def psnr(pred, ref):
    """PSNR in dB with the reference maximum as peak; ``inf`` when identical."""
    p, r = _pair(pred, ref)
    mse = float(np.mean((p - r) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(float(r.max()) ** 2 / mse)


@lru_cache(maxsize=None)
def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    w.setflags(write=False)
    return w


def _local_mean(img, win):
    return np.tensordot(sliding_window_view(img, win.shape), win, axes=([-2, -1], [0, 1]))


def ssim(pred, ref, data_range=None, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over every fully contained Gaussian window position."""
    p, r = _pair(pred, ref)
    if p.ndim != 2:
        raise DimensionError(f"ssim expects a single image, got {p.shape}")
    if min(p.shape) < window:
        raise ConfigurationError(f"image {p.shape} smaller than {window}x{window} window")
    rng = float(r.max()) if data_range is None else float(data_range)
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2
    win = gaussian_window(window, sigma)
    mx, my = _local_mean(p, win), _local_mean(r, win)
    sxx = _local_mean(p * p, win) - mx * mx
    syy = _local_mean(r * r, win) - my * my
    sxy = _local_mean(p * r, win) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


def fairness_stats(errors):
    """Mean and population standard deviation of per-client errors."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ContractError("fairness_stats needs at least one value")
    return float(e.mean()), float(e.std())


def param_count(model):
    """Number of scalar parameters.

    Accepts a model exposing ``param_shapes()`` (supernets also count their
    architecture logits) or a ``{name: array | shape}`` mapping.
    """
    if hasattr(model, "param_shapes"):
        total = sum(int(np.prod(s)) for s in model.param_shapes().values())
        if getattr(model, "is_supernet", False):
            denoiser = getattr(model, "denoiser", model)
            total += denoiser.topology.num_edges * 8
        return total
    total = 0
    for v in model.values():
        total += int(np.prod(v)) if isinstance(v, tuple) else int(np.asarray(v).size)
    return total


@dataclass(frozen=True)
class MetricRecord:
    scenario: str
    client_id: int
    recon: str
    psnr: float
    ssim: float
    loss: float

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.scenario!r}")

    def row(self):
        return [getattr(self, f) for f in RECORD_FIELDS]


def write_records_csv(records, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.row()])


def write_records_jsonl(records, path):
    with open(path, "w") as f:
        for rec in records:
            d = asdict(rec)
            f.write(json.dumps({k: d[k] for k in RECORD_FIELDS}) + "\n")


def read_records_jsonl(path):
    with open(path) as f:
        return [MetricRecord(**json.loads(line)) for line in f if line.strip()]
