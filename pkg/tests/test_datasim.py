import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fednasmri import autodiff as ad
from fednasmri.datasim import (ClientProfile, SampleSet, acs_columns, build_client_split,
                               contrast_shift_profile, default_profiles, derive_seed, full_mask,
                               generate_phantom, generate_samples, load_split, make_mask, resample,
                               save_split, simulate_kspace, split_dataset, split_sizes,
                               unseen_center_profile)
from fednasmri.errors import ConfigurationError
from fednasmri.reconstructor import zero_filled


def equispaced_oracle(width, acceleration, acs_fraction):
    """Reference construction: ACS block plus the remaining budget placed at
    the midpoints of equal-length runs of non-ACS columns."""
    n_acs = int(round(acs_fraction * width))
    acs = list(range(width // 2 - n_acs // 2, width // 2 - n_acs // 2 + n_acs))
    budget = int(round(width / acceleration))
    others = [c for c in range(width) if c not in acs]
    extra = budget - n_acs
    run = len(others) / extra
    picks = [others[int(run * i + run / 2)] for i in range(extra)]
    return sorted(acs + picks)


def test_phantom_deterministic_and_bounded():
    p = default_profiles(3)[1]
    a, b = generate_phantom(p, 4), generate_phantom(p, 4)
    assert np.array_equal(a, b)
    assert a.shape == (2, 32, 32)
    assert not a[1].any()
    for i in range(20):
        img = generate_phantom(p, i, size=16)
        assert img.min() >= 0 and img.max() <= 1


def test_gamma_changes_mean_intensity():
    lo = ClientProfile(0, gamma=0.5, seed=11)
    hi = ClientProfile(1, gamma=2.0, seed=12)
    m_lo = np.mean([generate_phantom(lo, i)[0].mean() for i in range(100)])
    m_hi = np.mean([generate_phantom(hi, i)[0].mean() for i in range(100)])
    assert m_lo - m_hi > 0.05


def test_default_clients_are_heterogeneous():
    means = {}
    for p in default_profiles(3):
        m = [generate_phantom(p, i)[0].mean() for i in range(60)]
        means[p.client_id] = (np.mean(m), np.std(m))
    ids = sorted(means)
    for i in ids:
        for j in ids:
            if i < j:
                gap = abs(means[i][0] - means[j][0])
                assert gap > max(means[i][1], means[j][1])


def test_profiles_distinct_and_validated():
    profiles = default_profiles(5) + [contrast_shift_profile(), unseen_center_profile()]
    pairs = {(p.gamma, p.intensity_scale) for p in profiles}
    assert len(pairs) == len(profiles)
    assert len({p.client_id for p in profiles}) == len(profiles)
    with pytest.raises(ConfigurationError):
        ClientProfile(0, gamma=0.0)
    p = profiles[2]
    assert ClientProfile.from_dict(p.to_dict()) == p


def test_equispaced_matches_enumeration():
    mask = make_mask("equispaced1d", 4, 32, acs_fraction=0.125)
    got = list(np.flatnonzero(mask.columns))
    assert got == equispaced_oracle(32, 4, 0.125)
    assert got == [3, 10, 14, 15, 16, 17, 21, 28]


@pytest.mark.parametrize("width", [32, 64])
@pytest.mark.parametrize("accel", [4, 6])
@pytest.mark.parametrize("kind", ["random1d", "equispaced1d"])
def test_realized_acceleration_within_ten_percent(kind, accel, width):
    for seed in range(5):
        mask = make_mask(kind, accel, width, 0.08, seed)
        assert abs(mask.realized_acceleration - accel) / accel <= 0.10
        assert np.all(mask.columns[acs_columns(width, 0.08)] == 1)
    if kind == "equispaced1d":
        assert list(np.flatnonzero(mask.columns)) == equispaced_oracle(width, accel, 0.08)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["random1d", "equispaced1d"]), st.floats(1.0, 8.0),
       st.sampled_from([16, 32, 64, 128]), st.integers(0, 2**20))
def test_mask_always_contains_acs(kind, accel, width, seed):
    frac = 0.125
    try:
        mask = make_mask(kind, accel, width, frac, seed)
    except ConfigurationError:
        assert round(frac * width) > round(width / accel)
        return
    assert np.all(mask.columns[acs_columns(width, frac)] == 1)
    assert mask.num_sampled == round(width / accel)
    assert mask == make_mask(kind, accel, width, frac, seed)


def test_random_masks_depend_on_seed():
    a = make_mask("random1d", 4, 64, 0.08, seed=1)
    b = make_mask("random1d", 4, 64, 0.08, seed=2)
    assert not np.array_equal(a.columns, b.columns)


def test_mask_errors():
    with pytest.raises(ConfigurationError):
        make_mask("random1d", 8, 32, acs_fraction=0.25)   # 8 ACS columns > 4-column budget
    with pytest.raises(ConfigurationError):
        make_mask("random1d", 4, 16, acs_fraction=0.08)   # fewer than 2 ACS columns
    with pytest.raises(ConfigurationError):
        make_mask("radial", 4, 32)
    with pytest.raises(ConfigurationError):
        make_mask("random1d", 0.5, 32)


def test_noiseless_full_sampling_roundtrip():
    img = generate_phantom(default_profiles(1)[0], 0)
    k = simulate_kspace(img, full_mask(32), 0.0)
    assert np.array_equal(k.data, ad.fft2(ad.Tensor(img)).data)
    assert np.max(np.abs(zero_filled(k).data - img)) < 1e-10


def test_unsampled_columns_are_zero():
    img = generate_phantom(default_profiles(1)[0], 0)
    mask = make_mask("random1d", 4, 32, seed=3)
    k = simulate_kspace(img, mask, 0.01, seed=4)
    off = mask.fft_columns() == 0
    assert not k.data[..., off].any()
    assert k.data[..., ~off].all()


def test_noise_level_monte_carlo():
    sigma = 0.02
    img = np.zeros((2, 64, 64))
    k = np.concatenate([simulate_kspace(img, full_mask(64), sigma, seed=s).data.ravel() for s in range(2)])
    assert k.size >= 10_000
    assert abs(k.std() - sigma) / sigma < 0.05


def test_split_examples():
    assert split_sizes(10, (7, 1, 2)) == (7, 1, 2)
    assert split_sizes(13, (7, 1, 2)) == (10, 1, 2)
    with pytest.raises(ConfigurationError):
        split_sizes(2, (7, 1, 2))
    items = list(range(10))
    a, b = split_dataset(items, seed=5), split_dataset(items, seed=5)
    assert (a.train, a.val, a.test) == (b.train, b.val, b.test)
    assert sorted(a.train + a.val + a.test) == items


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 200), st.lists(st.integers(1, 10), min_size=3, max_size=3), st.integers(0, 2**16))
def test_split_is_a_partition(n, ratios, seed):
    split = split_dataset(list(range(n)), ratios, seed)
    parts = split.train + split.val + split.test
    assert sorted(parts) == list(range(n))
    sizes = split.sizes()
    floors = [int(np.floor(n * r / sum(ratios))) for r in ratios]
    assert sizes[1:] == tuple(floors[1:])
    assert sizes[0] == n - sum(floors[1:])


def test_samples_follow_forward_model():
    p = default_profiles(2)[1]
    samples = generate_samples(p, 3, size=16, acs_fraction=0.125)
    for i, s in enumerate(samples):
        assert np.array_equal(s.image, generate_phantom(p, i, 16))
        noise = (s.kspace.data - ad.fft2(ad.Tensor(s.image)).data * s.mask.as_array())
        assert np.abs(noise).max() < 6 * p.noise_sigma
    assert not np.array_equal(samples[0].mask.columns, samples[1].mask.columns) or \
        not np.array_equal(samples[1].mask.columns, samples[2].mask.columns)


def test_resample_keeps_images_changes_masks():
    p = default_profiles(1)[0]
    samples = generate_samples(p, 2)
    shifted = resample([s.image for s in samples], "equispaced1d", 4, 0.08, 0.0, seed=1)
    for a, b in zip(samples, shifted):
        assert np.array_equal(a.image, b.image)
        assert b.mask.kind == "equispaced1d"


def test_split_persistence_roundtrip(tmp_path):
    p = default_profiles(1)[0]
    split = build_client_split(p, 10, size=16, acs_fraction=0.125)
    save_split(tmp_path / "c.gamr", split, {"profile": p.to_dict()})
    loaded, manifest = load_split(tmp_path / "c.gamr")
    assert manifest["profile"] == p.to_dict()
    for part in ("train", "val", "test"):
        want = SampleSet.from_samples(getattr(split, part))
        got = getattr(loaded, part)
        assert np.array_equal(got.images, want.images)
        assert np.array_equal(got.kspace, want.kspace)
        assert np.array_equal(got.masks, want.masks)


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
