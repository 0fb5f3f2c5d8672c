"""Training-time augmentation: JPEG re-encoding, colour jitter and horizontal flip.

Operator semantics (the ranges alone do not pin them down):

* jpeg        -- re-encode at an integer quality drawn from ``jpeg_quality_range``.
* saturation  -- PIL colour enhancement with factor drawn from ``saturation_range``.
* hue         -- shift of the hue channel by a fraction of the full wheel.
* brightness  -- additive offset in normalized pixel units (1.0 == 255).
* contrast    -- PIL contrast enhancement with factor ``1 + delta``.
* flip        -- horizontal mirror.

Transforms are tried in the fixed order above. Every transform consumes the
same number of random draws whether or not it fires, so the stream is stable.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from PIL import Image, ImageEnhance

from .errors import ConfigError

TRANSFORMS = ("jpeg", "saturation", "hue", "brightness", "contrast", "flip")


def _default_probs():
    return {name: 0.3 for name in TRANSFORMS}


@dataclass(frozen=True)
class AugmentationPolicy:
    probabilities: Mapping[str, float] = field(default_factory=_default_probs)
    jpeg_quality_range: tuple[int, int] = (70, 100)
    saturation_range: tuple[float, float] = (0.5, 1.0)
    hue_range: tuple[float, float] = (-0.2, 0.2)
    brightness_range: tuple[float, float] = (-0.2, 0.2)
    contrast_range: tuple[float, float] = (0.2, 0.5)
    horizontal_flip: bool = True

    def __post_init__(self):
        probs = dict(_default_probs())
        unknown = set(self.probabilities) - set(TRANSFORMS)
        if unknown:
            raise ConfigError(f"unknown augmentation transforms: {sorted(unknown)}")
        probs.update({k: float(v) for k, v in self.probabilities.items()})
        for k, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"probability for {k} must be in [0, 1], got {v}")
        object.__setattr__(self, "probabilities", probs)
        for name in ("jpeg_quality_range", "saturation_range", "hue_range", "brightness_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is not ordered: {lo} > {hi}")
            object.__setattr__(self, name, (lo, hi))
        qlo, qhi = self.jpeg_quality_range
        if int(qlo) != qlo or int(qhi) != qhi or not (1 <= qlo and qhi <= 100):
            raise ConfigError(f"jpeg qualities must be integers within [1, 100], got {self.jpeg_quality_range}")

    @classmethod
    def uniform(cls, p: float, **kwargs) -> "AugmentationPolicy":
        return cls(probabilities={name: p for name in TRANSFORMS}, **kwargs)

    @classmethod
    def disabled(cls) -> "AugmentationPolicy":
        return cls.uniform(0.0)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationPolicy":
        d = dict(d)
        kwargs = {}
        if "probability" in d:
            p = float(d.pop("probability"))
            kwargs["probabilities"] = {name: p for name in TRANSFORMS}
        if "probabilities" in d:
            kwargs.setdefault("probabilities", {}).update(d.pop("probabilities"))
        for key in list(d):
            if key.endswith("_range"):
                kwargs[key] = tuple(d.pop(key))
        if "horizontal_flip" in d:
            kwargs["horizontal_flip"] = bool(d.pop("horizontal_flip"))
        if d:
            raise ConfigError(f"unknown augmentation keys: {sorted(d)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "probabilities": dict(self.probabilities),
            "jpeg_quality_range": list(self.jpeg_quality_range),
            "saturation_range": list(self.saturation_range),
            "hue_range": list(self.hue_range),
            "brightness_range": list(self.brightness_range),
            "contrast_range": list(self.contrast_range),
            "horizontal_flip": self.horizontal_flip,
        }


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def adjust_saturation(image, factor):
    return np.asarray(ImageEnhance.Color(Image.fromarray(image)).enhance(factor), dtype=np.uint8)


def adjust_hue(image, delta):
    hsv = np.asarray(Image.fromarray(image).convert("HSV"), dtype=np.uint8).copy()
    shift = int(round(delta * 256)) % 256
    hsv[..., 0] = ((hsv[..., 0].astype(np.int32) + shift) % 256).astype(np.uint8)
    return np.asarray(Image.fromarray(hsv, "HSV").convert("RGB"), dtype=np.uint8)


def adjust_brightness(image, delta):
    return np.clip(image.astype(np.float32) + delta * 255.0, 0, 255).round().astype(np.uint8)


def adjust_contrast(image, delta):
    return np.asarray(ImageEnhance.Contrast(Image.fromarray(image)).enhance(1.0 + delta), dtype=np.uint8)


def hflip(image):
    return np.ascontiguousarray(image[:, ::-1])


def augment(image: np.ndarray, policy: AugmentationPolicy, rng) -> np.ndarray:
    """Apply the policy to a uint8 (H, W, 3) image; returns a new array of the same shape.

    ``rng`` may be a ``numpy.random.Generator`` or anything accepted by
    ``numpy.random.default_rng``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    probs = policy.probabilities
    out = image
    # draws: one coin + one parameter per transform, always
    coins = rng.random(len(TRANSFORMS))
    quality = int(rng.integers(policy.jpeg_quality_range[0], policy.jpeg_quality_range[1] + 1))
    sat = rng.uniform(*policy.saturation_range)
    hue = rng.uniform(*policy.hue_range)
    bright = rng.uniform(*policy.brightness_range)
    contrast = rng.uniform(*policy.contrast_range)

    if coins[0] < probs["jpeg"]:
        out = jpeg_roundtrip(out, quality)
    if coins[1] < probs["saturation"]:
        out = adjust_saturation(out, sat)
    if coins[2] < probs["hue"]:
        out = adjust_hue(out, hue)
    if coins[3] < probs["brightness"]:
        out = adjust_brightness(out, bright)
    if coins[4] < probs["contrast"]:
        out = adjust_contrast(out, contrast)
    if policy.horizontal_flip and coins[5] < probs["flip"]:
        out = hflip(out)
    if out is image:
        out = image.copy()
    return out


def applied_transforms(policy: AugmentationPolicy, rng) -> list[str]:
    """Which transforms :func:`augment` would fire for this generator state (consumes the same draws)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    coins = rng.random(len(TRANSFORMS))
    rng.integers(policy.jpeg_quality_range[0], policy.jpeg_quality_range[1] + 1)
    rng.uniform(size=4)
    fired = [n for n, c in zip(TRANSFORMS, coins) if c < policy.probabilities[n]]
    if not policy.horizontal_flip and "flip" in fired:
        fired.remove("flip")
    return fired
