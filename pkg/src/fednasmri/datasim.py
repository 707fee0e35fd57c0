"""Synthetic multi-client MR data: ellipse phantoms, Cartesian masks,
noisy single-coil acquisition and train/val/test splits.

All randomness comes from generators seeded with explicit integer tuples;
nothing touches numpy's global RNG.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import ConfigurationError, FormatError
from .fft import fft2_channels, is_power_of_two
from .reconstructor import KSpace, MaskSpec

MASK_KINDS = ("random1d", "equispaced1d")


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    gamma: float = 1.0
    intensity_scale: float = 1.0
    noise_sigma: float = 0.005
    ellipse_count: tuple = (4, 8)
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0 or self.intensity_scale <= 0 or self.noise_sigma < 0:
            raise ConfigurationError(f"invalid profile {self}")
        object.__setattr__(self, "ellipse_count", tuple(self.ellipse_count))

    def to_dict(self):
        d = asdict(self)
        d["ellipse_count"] = list(self.ellipse_count)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# (gamma, intensity_scale) per training client; later entries recycle with a twist
_CLIENT_TRANSFORMS = [(0.6, 1.0), (1.0, 0.85), (2.2, 1.0), (0.8, 0.7), (1.4, 0.9)]


def derive_seed(*parts):
    """Stable 32-bit seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def default_profiles(num_clients, master_seed=0, noise_sigma=0.005):
    profiles = []
    for c in range(num_clients):
        g, s = _CLIENT_TRANSFORMS[c % len(_CLIENT_TRANSFORMS)]
        if c >= len(_CLIENT_TRANSFORMS):
            g *= 1.0 + 0.1 * (c // len(_CLIENT_TRANSFORMS))
        profiles.append(ClientProfile(c, g, s, noise_sigma, (4, 8), derive_seed(master_seed, c)))
    return profiles


def contrast_shift_profile(master_seed=0, noise_sigma=0.005):
    """Same anatomy statistics as client 0, different contrast curve."""
    return ClientProfile(100, 1.3, 0.95, noise_sigma, (4, 8), derive_seed(master_seed, 100))


def unseen_center_profile(master_seed=0, noise_sigma=0.008):
    """Held-out site: transform parameters disjoint from every training client."""
    return ClientProfile(200, 0.75, 0.78, noise_sigma, (6, 11), derive_seed(master_seed, 200))


def generate_phantom(profile, index, size=32):
    """A ``[2, size, size]`` phantom (imaginary channel zero) in [0, 1]."""
    if not is_power_of_two(size):
        raise ConfigurationError(f"phantom size {size} is not a power of two")
    rng = np.random.default_rng([profile.seed, index, 0])
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    def ellipse(cx, cy, a, b, theta):
        ct, st = np.cos(theta), np.sin(theta)
        u = ((xx - cx) * ct + (yy - cy) * st) / a
        v = (-(xx - cx) * st + (yy - cy) * ct) / b
        return u * u + v * v

    img = np.zeros((size, size))
    head = ellipse(0, 0, rng.uniform(0.72, 0.9), rng.uniform(0.8, 0.95), rng.uniform(-0.3, 0.3))
    inside = head < 1
    img[inside] = rng.uniform(0.35, 0.55) * (1 - 0.25 * head[inside])
    lo, hi = profile.ellipse_count
    for _ in range(int(rng.integers(lo, hi + 1))):
        r2 = ellipse(rng.uniform(-0.45, 0.45), rng.uniform(-0.5, 0.5),
                     rng.uniform(0.08, 0.35), rng.uniform(0.08, 0.35), rng.uniform(0, np.pi))
        amp = rng.uniform(-0.3, 0.5)
        blob = r2 < 1
        img[blob] += amp * (1 - 0.5 * r2[blob])
    # slowly varying shading
    kx, ky = rng.uniform(-1, 1, size=2)
    img *= 1 + 0.1 * np.sin(np.pi * (kx * xx + ky * yy))
    img = np.clip(img, 0, None)
    peak = img.max()
    if peak > 0:
        img /= peak
    img = np.clip(profile.intensity_scale * img ** profile.gamma, 0.0, 1.0)
    return np.stack([img, np.zeros_like(img)])


def acs_columns(width, acs_fraction):
    n_acs = int(round(acs_fraction * width))
    start = width // 2 - n_acs // 2
    return np.arange(start, start + n_acs)


def make_mask(kind, acceleration, width, acs_fraction=0.08, seed=0):
    """Column mask with a fully sampled centre block.

    ``random1d`` fills the remaining budget ``round(W / R)`` with columns drawn
    without replacement. ``equispaced1d`` spreads the same budget evenly over
    the non-centre columns.
    """
    if kind not in MASK_KINDS:
        raise ConfigurationError(f"unknown mask kind {kind!r}")
    if acceleration < 1:
        raise ConfigurationError(f"acceleration must be >= 1, got {acceleration}")
    if not 0 < acs_fraction < 1 or acs_fraction * width < 2:
        raise ConfigurationError(f"ACS fraction {acs_fraction} too small for width {width}")
    acs = acs_columns(width, acs_fraction)
    budget = int(round(width / acceleration))
    extra = budget - len(acs)
    if extra < 0:
        raise ConfigurationError(
            f"ACS block ({len(acs)} columns) exceeds the {budget}-column budget of {acceleration}x")
    cols = np.zeros(width, dtype=np.uint8)
    cols[acs] = 1
    others = np.setdiff1d(np.arange(width), acs)
    if extra:
        if kind == "random1d":
            rng = np.random.default_rng([seed, width, 1])
            picks = rng.choice(others, size=extra, replace=False)
        else:
            step = len(others) / extra
            picks = others[np.floor(step * (np.arange(extra) + 0.5)).astype(int)]
        cols[picks] = 1
    return MaskSpec(kind, float(acceleration), float(acs_fraction), cols)


def full_mask(width):
    return MaskSpec("full", 1.0, 0.5, np.ones(width, dtype=np.uint8))


def simulate_kspace(image, mask, noise_sigma=0.0, seed=0):
    """``b = M (F x + eps)`` with complex Gaussian ``eps`` of per-component std ``noise_sigma``."""
    full = fft2_channels(np.asarray(image, dtype=np.float64))
    if noise_sigma > 0:
        rng = np.random.default_rng([seed, 2])
        full = full + rng.normal(0.0, noise_sigma, size=full.shape)
    return KSpace(full * mask.as_array(full.dtype), mask)


@dataclass
class Sample:
    image: np.ndarray
    kspace: KSpace

    @property
    def mask(self):
        return self.kspace.mask


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def split_sizes(n, ratios):
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise ConfigurationError(f"split ratios must be positive, got {ratios}")
    if n < len(ratios):
        raise ConfigurationError(f"{n} samples cannot fill {len(ratios)} splits")
    sizes = np.floor(n * ratios / ratios.sum()).astype(int)
    sizes[0] += n - sizes.sum()
    return tuple(int(s) for s in sizes)


def split_dataset(samples, ratios=(7, 1, 2), seed=0):
    """Shuffle deterministically, then cut contiguous train/val/test blocks."""
    if len(ratios) != 3:
        raise ConfigurationError("expected train/val/test ratios")
    n_tr, n_va, _ = split_sizes(len(samples), ratios)
    order = np.random.default_rng([seed, 3]).permutation(len(samples))
    items = [samples[i] for i in order]
    return DatasetSplit(items[:n_tr], items[n_tr:n_tr + n_va], items[n_tr + n_va:])


@dataclass
class SampleSet:
    """Stacked samples for batched training: arrays share a leading axis."""

    images: np.ndarray   # [N, 2, H, W]
    kspace: np.ndarray   # [N, 2, H, W]
    masks: np.ndarray    # [N, W], unshifted column order

    def __len__(self):
        return len(self.images)

    @classmethod
    def from_samples(cls, samples, dtype=np.float64):
        if not samples:
            return cls(np.zeros((0, 2, 0, 0), dtype), np.zeros((0, 2, 0, 0), dtype),
                       np.zeros((0, 0), dtype))
        return cls(np.stack([s.image for s in samples]).astype(dtype),
                   np.stack([s.kspace.data for s in samples]).astype(dtype),
                   np.stack([s.mask.fft_columns() for s in samples]).astype(dtype))

    def subset(self, idx):
        return SampleSet(self.images[idx], self.kspace[idx], self.masks[idx])

    def batch(self, idx=None):
        """``(kspace, masks, images)`` triple consumed by model losses."""
        if idx is None:
            return self.kspace, self.masks, self.images
        return self.kspace[idx], self.masks[idx], self.images[idx]

    def astype(self, dtype):
        return SampleSet(self.images.astype(dtype), self.kspace.astype(dtype),
                         self.masks.astype(dtype))


def generate_samples(profile, count, size=32, mask_kind="random1d", acceleration=4.0,
                     acs_fraction=0.08, start=0):
    """``count`` phantoms of ``profile`` with per-sample masks and noise."""
    out = []
    for i in range(start, start + count):
        image = generate_phantom(profile, i, size)
        mask = make_mask(mask_kind, acceleration, size, acs_fraction, seed=derive_seed(profile.seed, i, 1))
        out.append(Sample(image, simulate_kspace(image, mask, profile.noise_sigma,
                                                 seed=derive_seed(profile.seed, i, 2))))
    return out


def resample(images, mask_kind, acceleration, acs_fraction, noise_sigma, seed):
    """Re-acquire existing ``[2, H, W]`` images under a different mask family."""
    out = []
    for i, image in enumerate(images):
        width = image.shape[-1]
        mask = make_mask(mask_kind, acceleration, width, acs_fraction, seed=derive_seed(seed, i, 1))
        out.append(Sample(image, simulate_kspace(image, mask, noise_sigma, seed=derive_seed(seed, i, 2))))
    return out


def build_client_split(profile, count, ratios=(7, 1, 2), **kwargs):
    samples = generate_samples(profile, count, **kwargs)
    return split_dataset(samples, ratios, seed=profile.seed)


def save_split(path, split, meta=None, dtype=np.float64):
    """Persist a DatasetSplit (or SampleSets) in the tensor container format."""
    tensors = {}
    for part in ("train", "val", "test"):
        ss = getattr(split, part)
        if not isinstance(ss, SampleSet):
            ss = SampleSet.from_samples(ss, dtype)
        tensors[f"{part}.images"] = ss.images
        tensors[f"{part}.kspace"] = ss.kspace
        tensors[f"{part}.masks"] = ss.masks.astype(np.uint8)
    write_container(path, tensors, dict(meta or {}, kind="dataset"))


def load_split(path, dtype=np.float64):
    """Inverse of ``save_split``: a DatasetSplit of SampleSets plus the manifest."""
    tensors, manifest = read_container(path)
    if manifest.get("kind") != "dataset":
        raise FormatError(f"{path} holds {manifest.get('kind')!r}, not a dataset")
    parts = [SampleSet(tensors[f"{p}.images"], tensors[f"{p}.kspace"], tensors[f"{p}.masks"]).astype(dtype)
             for p in ("train", "val", "test")]
    return DatasetSplit(*parts), manifest
