"""Scoring trained reconstructors on in-distribution and shifted test sets."""

import numpy as np

from . import autodiff as ad
from .datasim import SampleSet, derive_seed, resample
from .metrics import MetricRecord, psnr, ssim
from .reconstructor import zero_filled

# salts keeping re-acquisition noise/mask streams apart from the generator's
_MASK_SHIFT_SALT, _ACCEL_SHIFT_SALT = 11, 12


def reconstruct_set(model, theta, samples, alpha=None, batch=16):
    """Model reconstructions of every sample in a SampleSet, as an array."""
    params = {k: ad.Tensor(np.asarray(v)) for k, v in theta.items()}
    alpha = None if alpha is None else ad.Tensor(np.asarray(alpha))
    outs = []
    for s in range(0, len(samples), batch):
        kspace, masks, _ = samples.batch(slice(s, s + batch))
        outs.append(model.forward(params, kspace, masks, alpha).data)
    return np.concatenate(outs) if outs else np.zeros_like(samples.images)


def score(recons, refs):
    """Mean PSNR, SSIM and MSE loss over a stack of reconstructions."""
    recons = np.asarray(recons, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    p = np.mean([psnr(x, r) for x, r in zip(recons, refs)])
    s = np.mean([ssim(x, r) for x, r in zip(recons, refs)])
    loss = float(np.mean((recons - refs) ** 2))
    return float(p), float(s), loss


def evaluate_samples(model, theta, samples, scenario, client_id, alpha=None, batch=16):
    """Two MetricRecords: the model and the zero-filled baseline."""
    zf = zero_filled(ad.Tensor(samples.kspace.astype(np.float64))).data
    model_out = reconstruct_set(model, theta, samples, alpha, batch)
    return [
        MetricRecord(scenario, int(client_id), "model", *score(model_out, samples.images)),
        MetricRecord(scenario, int(client_id), "zero_filled", *score(zf, samples.images)),
    ]


def scenario_sets(cfg, clients, heldout, scenarios):
    """Yield ``(scenario, client_id, SampleSet)`` for every requested scenario.

    ``clients`` maps client id to ``(DatasetSplit, noise_sigma)``; ``heldout``
    maps ``contrast_shift``/``unseen_center`` to ``(client_id, SampleSet)``.
    Shifted-mask sets re-acquire the clients' test images from scratch.
    """
    dtype = np.dtype(cfg.dtype)
    for scenario in scenarios:
        if scenario in heldout:
            cid, ss = heldout[scenario]
            yield scenario, cid, ss.astype(dtype)
            continue
        for cid in sorted(clients):
            split, noise = clients[cid]
            test = split.test
            if scenario == "in_distribution":
                yield scenario, cid, test.astype(dtype)
                continue
            if scenario == "mask_shift":
                kind, accel, salt = "equispaced1d", cfg.acceleration, _MASK_SHIFT_SALT
            elif scenario == "acceleration_shift":
                kind, accel, salt = "random1d", cfg.shift_acceleration, _ACCEL_SHIFT_SALT
            else:
                raise KeyError(f"no data for scenario {scenario!r}")
            images = test.images.astype(np.float64)
            samples = resample(images, kind, accel, cfg.acs_fraction, noise,
                               seed=derive_seed(cfg.seed, cid, salt))
            yield scenario, cid, SampleSet.from_samples(samples, dtype)


def evaluate_scenarios(cfg, model, theta, clients, heldout, scenarios=None, alpha=None):
    records = []
    for scenario, cid, samples in scenario_sets(cfg, clients, heldout, scenarios or cfg.scenarios):
        records.extend(evaluate_samples(model, theta, samples, scenario, cid, alpha, cfg.eval_batch))
    return records
