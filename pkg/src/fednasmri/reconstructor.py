"""Unrolled reconstruction: learned denoiser alternating with a closed-form
data-consistency step for single-coil Cartesian sampling.

Images and k-space are 2-channel (real, imag) arrays. With ``A = M F`` and
unitary ``F`` the normal equations are diagonal in k-space, so

    X_k = (M_k B_k + lam Z_k) / (M_k + lam),   Z = F z,   x = F^H X.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .search_space import CellStack


@dataclass(frozen=True, eq=False)
class MaskSpec:
    """1D Cartesian column mask.

    ``columns`` is stored in display (centred) order: the DC column sits at
    index ``W // 2``. :meth:`fft_columns` gives the unshifted order used by
    the transforms.
    """

    kind: str
    acceleration: float
    acs_fraction: float
    columns: np.ndarray

    @property
    def width(self):
        return len(self.columns)

    @property
    def num_sampled(self):
        return int(np.count_nonzero(self.columns))

    @property
    def realized_acceleration(self):
        return self.width / self.num_sampled

    def fft_columns(self):
        return np.fft.ifftshift(np.asarray(self.columns, dtype=np.float64))

    def as_array(self, dtype=np.float64):
        """Mask broadcastable against ``[..., 2, H, W]`` k-space."""
        return self.fft_columns().astype(dtype)[None, None, :]

    def to_dict(self):
        return {"kind": self.kind, "acceleration": self.acceleration,
                "acs_fraction": self.acs_fraction,
                "columns": [int(c) for c in self.columns]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["acceleration"]), float(d["acs_fraction"]),
                   np.asarray(d["columns"], dtype=np.uint8))

    def __eq__(self, other):
        return (isinstance(other, MaskSpec) and self.kind == other.kind
                and self.acceleration == other.acceleration
                and self.acs_fraction == other.acs_fraction
                and np.array_equal(self.columns, other.columns))

    __hash__ = None


@dataclass
class KSpace:
    data: np.ndarray  # [2, H, W]
    mask: MaskSpec

    def __post_init__(self):
        if self.data.ndim < 3 or self.data.shape[-3] != 2:
            raise DimensionError(f"k-space must be [..., 2, H, W], got {self.data.shape}")
        if self.data.shape[-1] != self.mask.width:
            raise DimensionError(f"mask width {self.mask.width} vs k-space width {self.data.shape[-1]}")


def _mask_array(mask, like):
    if isinstance(mask, MaskSpec):
        return mask.as_array(like.dtype)
    return np.asarray(mask, dtype=like.dtype)


def zero_filled(b):
    """Adjoint reconstruction ``F^H b``."""
    data = b.data if isinstance(b, KSpace) else b
    return ad.ifft2(ad.as_tensor(data))


def data_consistency(z, b, mask, lam):
    """Closed-form solution of ``(A^H A + lam I) x = A^H b + lam z``.

    ``b`` may be a KSpace, array or Tensor; ``mask`` a MaskSpec or an array
    broadcastable to the k-space (unshifted column order). ``lam`` may be a
    float or a scalar Tensor.
    """
    lam = ad.as_tensor(lam, dtype=z.dtype)
    if np.any(lam.data <= 0):
        raise ContractError(f"data-consistency weight must be positive, got {lam.data}")
    kdata = b.data if isinstance(b, KSpace) else b
    kdata = ad.as_tensor(kdata, dtype=z.dtype)
    m = _mask_array(mask, z.data)
    zk = ad.fft2(z)
    xk = (m * kdata + lam * zk) / (lam + m)
    return ad.ifft2(xk)


def training_loss(pred, ref):
    """Mean squared error over every element."""
    ref = ad.as_tensor(ref, dtype=pred.dtype)
    if pred.shape != ref.shape:
        raise DimensionError(f"loss shape mismatch: {pred.shape} vs {ref.shape}")
    return ad.mean(ad.square(pred - ref))


def _softplus_inverse(y):
    return float(np.log(np.expm1(y)))


class UnrolledModel:
    """``J`` shared-weight iterations of residual denoising then data consistency."""

    LAMBDA = "dc.lambda_raw"

    def __init__(self, denoiser=None, iterations=3, lambda_init=0.05):
        if iterations < 1:
            raise ContractError("need at least one unrolled iteration")
        self.denoiser = denoiser or CellStack()
        self.iterations = iterations
        self.lambda_init = lambda_init

    @property
    def is_supernet(self):
        return self.denoiser.is_supernet

    def param_shapes(self):
        shapes = dict(self.denoiser.param_shapes())
        shapes[self.LAMBDA] = ()
        return shapes

    def init_params(self, rng, dtype=np.float64):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        params = self.denoiser.init_params(rng, dtype)
        params[self.LAMBDA] = np.asarray(_softplus_inverse(self.lambda_init), dtype=dtype)
        return params

    def describe(self):
        d = self.denoiser
        return {"channels": d.channels, "cells": d.cells,
                "num_intermediate": d.topology.num_intermediate,
                "iterations": self.iterations, "lambda_init": self.lambda_init}

    def denoise(self, params, x, alpha=None):
        return x + self.denoiser.forward(params, x, alpha)

    def forward(self, params, kspace, mask, alpha=None):
        """Reconstruct a batch ``[N, 2, H, W]`` (or a single ``[2, H, W]``)."""
        kspace = ad.as_tensor(kspace)
        single = kspace.ndim == 3
        if single:
            kspace = ad.reshape(kspace, (1,) + kspace.shape)
        m = _mask_array(mask, kspace.data)
        if m.ndim == 2:  # per-sample columns [N, W]
            m = m[:, None, None, :]
        lam = ad.softplus(params[self.LAMBDA])
        x = zero_filled(kspace)
        for _ in range(self.iterations):
            z = self.denoise(params, x, alpha)
            x = data_consistency(z, kspace, m, lam)
        if single:
            x = ad.reshape(x, x.shape[1:])
        return x

    def loss(self, params, alpha, batch):
        kspace, masks, images = batch
        return training_loss(self.forward(params, kspace, masks, alpha), images)


def reconstruct(b, mask, model, params, alpha=None):
    """Run ``model`` on one k-space sample; ``params`` maps names to arrays or Tensors."""
    params = {k: ad.as_tensor(v) for k, v in params.items()}
    data = b.data if isinstance(b, KSpace) else b
    return model.forward(params, data, mask, alpha)
