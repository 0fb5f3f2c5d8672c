import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archverify.augment import (
    TRANSFORMS,
    AugmentationPolicy,
    adjust_brightness,
    adjust_contrast,
    adjust_hue,
    applied_transforms,
    augment,
    hflip,
    jpeg_roundtrip,
)
from archverify.errors import ConfigError


@pytest.fixture
def image(probe_images):
    return probe_images[0]


def only(name, p=1.0):
    return AugmentationPolicy(probabilities={n: (p if n == name else 0.0) for n in TRANSFORMS})


def test_disabled_policy_is_identity(image):
    out = augment(image, AugmentationPolicy.disabled(), np.random.default_rng(0))
    assert np.array_equal(out, image)
    assert out is not image


def test_flip_only_mirrors_and_is_an_involution(image):
    out = augment(image, only("flip"), 0)
    assert np.array_equal(out, image[:, ::-1])
    assert np.array_equal(hflip(hflip(image)), image)


def test_flip_disabled_by_flag(image):
    pol = AugmentationPolicy(probabilities={n: (1.0 if n == "flip" else 0.0) for n in TRANSFORMS},
                             horizontal_flip=False)
    assert np.array_equal(augment(image, pol, 0), image)


def test_application_frequency_monte_carlo():
    # binomial sd at n=10000, p=0.3 is ~0.0046, so +-0.02 is more than four sd
    pol = AugmentationPolicy()
    rng = np.random.default_rng(2024)
    counts = dict.fromkeys(TRANSFORMS, 0)
    n = 10_000
    for _ in range(n):
        for name in applied_transforms(pol, rng):
            counts[name] += 1
    for name, c in counts.items():
        assert abs(c / n - 0.3) <= 0.02, (name, c / n)


def test_applied_transforms_tracks_augment(image):
    # same seed: augment output equals the composition of exactly the reported operators
    pol = AugmentationPolicy.uniform(0.5)
    for seed in range(20):
        fired = applied_transforms(pol, seed)
        rng = np.random.default_rng(seed)
        rng.random(len(TRANSFORMS))
        q = int(rng.integers(70, 101))
        params = [rng.uniform(*r) for r in (pol.saturation_range, pol.hue_range, pol.brightness_range,
                                              pol.contrast_range)]
        expected = image
        from archverify.augment import adjust_saturation
        ops = {
            "jpeg": lambda im: jpeg_roundtrip(im, q),
            "saturation": lambda im: adjust_saturation(im, params[0]),
            "hue": lambda im: adjust_hue(im, params[1]),
            "brightness": lambda im: adjust_brightness(im, params[2]),
            "contrast": lambda im: adjust_contrast(im, params[3]),
            "flip": hflip,
        }
        for name in TRANSFORMS:
            if name in fired:
                expected = ops[name](expected)
        assert np.array_equal(augment(image, pol, seed), expected)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_shape_dtype_and_determinism(seed):
    img = np.random.default_rng(seed).integers(0, 256, (24, 40, 3), dtype=np.uint8)
    pol = AugmentationPolicy.uniform(0.7)
    a = augment(img, pol, seed)
    assert a.shape == img.shape and a.dtype == np.uint8
    assert np.array_equal(a, augment(img, pol, np.random.default_rng(seed)))


@given(q=st.integers(70, 100))
@settings(max_examples=10, deadline=None)
def test_jpeg_keeps_dimensions(q):
    img = np.random.default_rng(q).integers(0, 256, (33, 47, 3), dtype=np.uint8)
    assert jpeg_roundtrip(img, q).shape == img.shape


def test_brightness_is_additive_in_normalized_units():
    img = np.full((2, 2, 3), 100, np.uint8)
    assert (adjust_brightness(img, 0.2) == 151).all()  # 100 + 0.2 * 255 = 151
    assert (adjust_brightness(img, -1.0) == 0).all()


def test_contrast_factor_is_one_plus_delta():
    img = np.zeros((4, 4, 3), np.uint8)
    img[:2] = 200
    img[2:] = 100
    # zero delta leaves the image unchanged; positive delta stretches away from the mean
    assert np.array_equal(adjust_contrast(img, 0.0), img)
    out = adjust_contrast(img, 0.5)
    assert out[0, 0, 0] > 200 and out[3, 0, 0] < 100


def test_hue_full_turn_is_identity_on_hsv_grid(image):
    assert np.array_equal(adjust_hue(image, 1.0), adjust_hue(image, 0.0))


@pytest.mark.parametrize("kwargs", [
    {"probabilities": {"jpeg": 1.5}},
    {"probabilities": {"blur": 0.3}},
    {"saturation_range": (1.0, 0.5)},
    {"jpeg_quality_range": (0, 100)},
    {"jpeg_quality_range": (70.5, 100)},
])
def test_policy_validation(kwargs):
    with pytest.raises(ConfigError):
        AugmentationPolicy(**kwargs)


def test_policy_dict_round_trip():
    pol = AugmentationPolicy(probabilities={"hue": 0.1}, contrast_range=(0.1, 0.2), horizontal_flip=False)
    assert AugmentationPolicy.from_dict(pol.to_dict()) == pol
    assert AugmentationPolicy.from_dict({"probability": 0.0}) == AugmentationPolicy.disabled()
    with pytest.raises(ConfigError):
        AugmentationPolicy.from_dict({"sharpness": 1})
