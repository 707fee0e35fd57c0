import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fednasmri.errors import ConfigurationError, ContractError, DimensionError
from fednasmri.metrics import (MetricRecord, fairness_stats, magnitude, param_count, psnr,
                               read_records_jsonl, ssim, write_records_csv, write_records_jsonl)
from fednasmri.reconstructor import UnrolledModel
from fednasmri.search_space import CellStack, DiscreteArch


def naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Window-by-window SSIM with explicit weighted moments."""
    ax = np.arange(size) - size // 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    L = y.max()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a, b = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            ma, mb = (w * a).sum(), (w * b).sum()
            va, vb = (w * (a - ma) ** 2).sum(), (w * (b - mb) ** 2).sum()
            cov = (w * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_examples():
    rng = np.random.default_rng(0)
    ref = rng.random((16, 16))
    assert psnr(ref, ref) == math.inf
    err = np.sign(rng.standard_normal(ref.shape)) * ref.max() * 1e-2
    assert abs(psnr(ref + err, ref) - 40.0) < 1e-9
    pred = rng.random((16, 16))
    want = 10 * math.log10(ref.max() ** 2 / np.mean((pred - ref) ** 2))
    assert abs(psnr(pred, ref) - want) < 1e-9
    with pytest.raises(DimensionError):
        psnr(pred, ref[:8])


def test_psnr_uses_magnitude_of_two_channel_images():
    rng = np.random.default_rng(1)
    ref = rng.random((2, 16, 16))
    pred = rng.random((2, 16, 16))
    assert psnr(pred, ref) == psnr(np.hypot(*pred), np.hypot(*ref))
    assert np.allclose(magnitude(ref), np.hypot(*ref))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.01, 0.99))
def test_psnr_monotone_in_error(seed, shrink):
    rng = np.random.default_rng(seed)
    ref = rng.random((8, 8)) + 0.1
    noise = rng.standard_normal((8, 8)) * 0.1
    assert psnr(ref + shrink * noise, ref) > psnr(ref + noise, ref)


def test_ssim_examples():
    rng = np.random.default_rng(2)
    ref = rng.random((24, 24))
    assert abs(ssim(ref, ref) - 1.0) < 1e-12
    assert ssim(rng.random((24, 24)), ref) < 1.0
    with pytest.raises(ConfigurationError):
        ssim(ref[:8, :8], ref[:8, :8])


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_naive_windows(seed):
    rng = np.random.default_rng(seed)
    ref = rng.random((20, 18))
    pred = ref + 0.2 * rng.standard_normal(ref.shape)
    assert abs(ssim(pred, ref) - naive_ssim(pred, ref)) < 1e-6


def test_fairness_stats_examples():
    mean, std = fairness_stats([0.4, 0.4, 0.4])
    assert abs(mean - 0.4) < 1e-15 and std < 1e-15
    mean, std = fairness_stats([1, 2, 3])
    assert mean == 2 and abs(std - math.sqrt(2 / 3)) < 1e-15
    assert fairness_stats([3, 1, 2]) == fairness_stats([1, 2, 3])
    with pytest.raises(ContractError):
        fairness_stats([])


def test_param_count_examples():
    assert param_count({"w": (1, 1, 3, 3)}) == 9
    assert param_count({"w": np.zeros((1, 1, 3, 3)), "b": np.zeros(())}) == 10
    arch = DiscreteArch((0, 3, 6, 1, 7), channels=8, cells=2)
    model = UnrolledModel(CellStack(arch=arch))
    params = model.init_params(0)
    assert param_count(model) == sum(v.size for v in params.values())
    supernet = UnrolledModel(CellStack(channels=8, cells=2))
    assert param_count(supernet) == sum(v.size for v in supernet.init_params(0).values()) + 5 * 8
    assert param_count(model) < param_count(supernet)


def test_record_io(tmp_path):
    recs = [MetricRecord("in_distribution", 0, "model", 30.123456789012345, 0.91, 1e-3),
            MetricRecord("unseen_center", 200, "zero_filled", 21.5, 0.6, 4e-3)]
    write_records_jsonl(recs, tmp_path / "m.jsonl")
    assert read_records_jsonl(tmp_path / "m.jsonl") == recs
    write_records_csv(recs, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "scenario,client_id,recon,psnr,ssim,loss"
    assert float(lines[1].split(",")[3]) == recs[0].psnr
    with pytest.raises(ContractError):
        MetricRecord("somewhere_else", 0, "model", 1.0, 1.0, 1.0)
