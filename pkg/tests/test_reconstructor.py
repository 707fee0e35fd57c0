import numpy as np
import pytest

from fednasmri import autodiff as ad
from fednasmri.errors import ContractError, DimensionError
from fednasmri.reconstructor import (KSpace, MaskSpec, UnrolledModel, data_consistency, reconstruct,
                                     training_loss, zero_filled)
from fednasmri.search_space import CellStack, DiscreteArch

from helpers import check_grads


def to_complex(x):
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]


def to_channels(z):
    return np.stack([z.real, z.imag], axis=-3)


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def dense_dc_oracle(z, b, cols, lam):
    """Assemble A = M F explicitly and solve the regularized normal equations."""
    h, w = z.shape[-2:]
    f = np.kron(dft_matrix(h), dft_matrix(w))
    m = np.diag(np.tile(cols, h).astype(complex))
    a = m @ f
    lhs = a.conj().T @ a + lam * np.eye(h * w)
    rhs = a.conj().T @ to_complex(b).ravel() + lam * to_complex(z).ravel()
    return np.linalg.solve(lhs, rhs).reshape(h, w)


def test_dense_solve_oracle_50_cases():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cols = (rng.random(8) < rng.uniform(0.1, 0.9)).astype(float)
        lam = float(10 ** rng.uniform(-3, 1))
        z = rng.standard_normal((2, 8, 8))
        b = rng.standard_normal((2, 8, 8)) * cols
        got = to_complex(data_consistency(ad.Tensor(z), b, cols, lam).data)
        assert np.max(np.abs(got - dense_dc_oracle(z, b, cols, lam))) < 1e-8


def test_zero_mask_returns_input():
    z = np.random.default_rng(1).standard_normal((2, 8, 8))
    out = data_consistency(ad.Tensor(z), np.zeros_like(z), np.zeros(8), 0.3).data
    assert np.max(np.abs(out - z)) < 1e-14


def test_full_mask_unit_lambda_averages():
    rng = np.random.default_rng(2)
    z, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 8, 8))
    out = data_consistency(ad.Tensor(z), b, np.ones(8), 1.0)
    zk = ad.fft2(ad.Tensor(z)).data
    assert np.max(np.abs(ad.fft2(out).data - (b + zk) / 2)) < 1e-12


def test_consistent_input_is_fixed_point():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2, 8, 8))
    cols = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=float)
    b = ad.fft2(ad.Tensor(z)).data * cols
    out = data_consistency(ad.Tensor(z), b, cols, 0.05).data
    assert np.max(np.abs(out - z)) < 1e-12


def test_small_lambda_pulls_toward_measurements():
    rng = np.random.default_rng(4)
    z, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 8, 8))
    cols = np.array([1, 1, 0, 0, 1, 0, 0, 0], dtype=float)
    b = b * cols
    gaps = []
    for lam in (1.0, 0.1, 0.01):
        xk = ad.fft2(data_consistency(ad.Tensor(z), b, cols, lam)).data
        gaps.append(np.max(np.abs((xk - b) * cols)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_nonpositive_lambda_rejected():
    z = ad.Tensor(np.zeros((2, 8, 8)))
    for lam in (0.0, -1.0):
        with pytest.raises(ContractError):
            data_consistency(z, np.zeros((2, 8, 8)), np.ones(8), lam)


def test_zero_filled_examples():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 8, 8))
    full = MaskSpec("full", 1.0, 0.5, np.ones(8, dtype=np.uint8))
    b = KSpace(ad.fft2(ad.Tensor(x)).data, full)
    assert np.max(np.abs(zero_filled(b).data - x)) < 1e-10
    assert not zero_filled(np.zeros((2, 8, 8))).data.any()
    b1, b2 = rng.standard_normal((2, 2, 8, 8))
    lin = zero_filled(b1 + b2).data - zero_filled(b1).data - zero_filled(b2).data
    assert np.max(np.abs(lin)) < 1e-10


def test_kspace_shape_checks():
    mask = MaskSpec("random1d", 4.0, 0.25, np.ones(8, dtype=np.uint8))
    with pytest.raises(DimensionError):
        KSpace(np.zeros((3, 8, 8)), mask)
    with pytest.raises(DimensionError):
        KSpace(np.zeros((2, 8, 16)), mask)


def test_mask_spec_orders_and_roundtrip():
    cols = np.zeros(8, dtype=np.uint8)
    cols[4] = 1  # centre of the display order is DC
    m = MaskSpec("random1d", 8.0, 0.125, cols)
    assert m.fft_columns()[0] == 1 and m.fft_columns().sum() == 1
    assert m.realized_acceleration == 8.0
    assert MaskSpec.from_dict(m.to_dict()) == m


def test_training_loss_examples():
    rng = np.random.default_rng(6)
    ref = rng.standard_normal((2, 2, 8, 8))
    assert training_loss(ad.Tensor(ref), ref).data == 0
    assert abs(float(training_loss(ad.Tensor(ref + 0.3), ref).data) - 0.09) < 1e-12
    pred = rng.standard_normal(ref.shape)
    want = sum((p - r) ** 2 for p, r in zip(pred.ravel(), ref.ravel())) / ref.size
    assert abs(float(training_loss(ad.Tensor(pred), ref).data) - want) < 1e-12
    with pytest.raises(DimensionError):
        training_loss(ad.Tensor(pred), ref[0])


def zero_model(iterations=1, lambda_init=1.0):
    model = UnrolledModel(CellStack(arch=DiscreteArch((0, 3, 6, 1, 7), channels=2, cells=1)),
                          iterations, lambda_init)
    params = model.init_params(0)
    params = {k: (v if k == model.LAMBDA else np.zeros_like(v)) for k, v in params.items()}
    return model, params


def test_reconstruct_zero_denoiser_full_mask():
    model, params = zero_model()
    b = np.random.default_rng(7).standard_normal((2, 8, 8))
    full = MaskSpec("full", 1.0, 0.5, np.ones(8, dtype=np.uint8))
    out = reconstruct(b, full, model, params).data
    assert out.shape == (2, 8, 8)
    assert np.max(np.abs(out - ad.ifft2(ad.Tensor(b)).data)) < 1e-12


def test_reconstruct_two_iterations_manual():
    rng = np.random.default_rng(8)
    model = UnrolledModel(CellStack(arch=DiscreteArch((1, 3, 6, 4, 7), channels=3, cells=1)), 2)
    params = model.init_params(rng)
    cols = (rng.random(8) < 0.5).astype(float)
    b = rng.standard_normal((2, 8, 8)) * cols
    p = {k: ad.Tensor(v) for k, v in params.items()}
    lam = float(np.log1p(np.exp(params[model.LAMBDA])))
    x = ad.ifft2(ad.Tensor(b[None]))
    for _ in range(2):
        z = x + model.denoiser.forward(p, x)
        x = data_consistency(z, b[None], cols, lam)
    got = model.forward(p, b, cols).data
    assert got.shape == (2, 8, 8)
    assert np.max(np.abs(got - x.data[0])) < 1e-10
    again = model.forward(p, b, cols).data
    assert np.array_equal(got, again)


def test_lambda_initialised_through_softplus():
    model = UnrolledModel(iterations=3, lambda_init=0.05)
    lam_raw = model.init_params(0)[model.LAMBDA]
    assert abs(np.log1p(np.exp(lam_raw)) - 0.05) < 1e-12


def test_dc_gradients():
    rng = np.random.default_rng(9)
    cols = (rng.random(8) < 0.5).astype(float)
    arrays = {"z": rng.standard_normal((2, 2, 8, 8)), "b": rng.standard_normal((2, 2, 8, 8)) * cols,
              "lam_raw": np.array(-0.5)}
    weights = rng.standard_normal((2, 2, 8, 8))

    def f(p):
        return ad.tsum(data_consistency(p["z"], p["b"], cols, ad.softplus(p["lam_raw"])) * weights)

    errs = check_grads(f, arrays)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("supernet", [False, True])
def test_end_to_end_loss_gradients(supernet):
    rng = np.random.default_rng(10)
    if supernet:
        model = UnrolledModel(CellStack(channels=2, cells=1), iterations=2)
    else:
        model = UnrolledModel(CellStack(arch=DiscreteArch((2, 3, 6, 5, 7), channels=3, cells=2)), 2)
    arrays = model.init_params(rng)
    if supernet:
        arrays["alpha"] = rng.standard_normal((5, 8))
    images = rng.standard_normal((2, 2, 8, 8))
    masks = (rng.random((2, 8)) < 0.5).astype(float)
    kspace = ad.fft2(ad.Tensor(images)).data * masks[:, None, None, :]

    def f(p):
        return model.loss(p, p.get("alpha"), (kspace, masks, images))

    errs = check_grads(f, arrays, max_coords=3 if supernet else 6)
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}
