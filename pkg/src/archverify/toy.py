"""Procedural stand-ins for generative architectures.

Each toy "architecture" paints a smooth random scene (shared statistics across
all sources) and adds a faint band-limited noise texture whose spectral support
is specific to the architecture. That texture plays the role of the generator
fingerprint. Model variants of one architecture perturb the band slightly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DatasetManifest, ManifestRecord, write_manifest
from .imaging import save_image


@dataclass(frozen=True)
class ToySource:
    name: str
    band: tuple[float, float]  # radial frequency, cycles per pixel
    orientation: float | None = None  # degrees; None = isotropic
    spread: float = 20.0  # angular half-width in degrees
    amplitude: float = 0.07
    chroma: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def variant(self, shift: float = 0.01, gain: float = 1.0) -> "ToySource":
        lo, hi = self.band
        return replace(self, band=(lo + shift, hi + shift), amplitude=self.amplitude * gain)


DEFAULT_SOURCES = (
    ToySource("toy_a", (0.08, 0.14)),
    ToySource("toy_b", (0.20, 0.28)),
    ToySource("toy_c", (0.10, 0.24), orientation=0.0),
    ToySource("toy_d", (0.10, 0.24), orientation=90.0),
    ToySource("toy_e", (0.10, 0.24), orientation=0.0, chroma=(1.0, -1.0, 0.0)),
    ToySource("toy_f", (0.10, 0.24), orientation=45.0),
)


def _freq_grid(size):
    f = np.fft.fftfreq(size)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    return fy, fx


def _band_mask(size, source: ToySource):
    fy, fx = _freq_grid(size)
    r = np.hypot(fx, fy)
    mask = (r >= source.band[0]) & (r <= source.band[1])
    if source.orientation is not None:
        theta = np.degrees(np.arctan2(fy, fx)) % 180.0
        diff = np.abs((theta - source.orientation + 90.0) % 180.0 - 90.0)
        mask &= diff <= source.spread
    return mask.astype(np.float64)


def _scene(rng, size):
    fy, fx = _freq_grid(size)
    lowpass = np.exp(-(fx ** 2 + fy ** 2) / (2 * 0.03 ** 2))
    chans = []
    for _ in range(3):
        field = np.real(np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * lowpass))
        field /= field.std() + 1e-12
        chans.append(field)
    scene = np.stack(chans, -1) * 0.12 + rng.uniform(0.35, 0.65, size=3)
    return scene


def render(source: ToySource, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One uint8 (size, size, 3) image from ``source``."""
    scene = _scene(rng, size)
    noise = np.real(np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * _band_mask(size, source)))
    noise *= source.amplitude / (noise.std() + 1e-12)
    img = scene + noise[..., None] * np.asarray(source.chroma)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def make_toy_dataset(root, sources=DEFAULT_SOURCES, per_source: int = 100, size: int = 64,
                     seed: int = 0, models_per_source: int = 2, domain: str = "toy") -> DatasetManifest:
    """Write PNGs under ``root/<arch>/`` and a ``manifest.tsv``; returns the manifest.

    Images are split evenly across ``models_per_source`` model variants.
    """
    root = Path(root)
    records = []
    for si, src in enumerate(sources):
        (root / src.name).mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng([seed, si])
        models = [src.variant(shift=0.01 * k) for k in range(models_per_source)]
        for i in range(per_source):
            k = i % models_per_source
            rel = f"{src.name}/{src.name}_{i:05d}.png"
            save_image(render(models[k], rng, size), root / rel)
            records.append(ManifestRecord(rel, src.name, domain, f"{src.name}-m{k}"))
    write_manifest(records, root / "manifest.tsv")
    return DatasetManifest(tuple(replace(r, path=str(root / r.path)) for r in records))


def make_unknown_model_images(root, source: ToySource, n: int, size: int = 64, seed: int = 1,
                              shift: float = 0.02, gain: float = 1.2) -> list[ManifestRecord]:
    """Images from an unseen model of a known architecture (shifted band, changed gain)."""
    root = Path(root)
    out_dir = root / f"{source.name}_unknown"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 7919])
    model = source.variant(shift=shift, gain=gain)
    records = []
    for i in range(n):
        p = out_dir / f"unknown_{i:05d}.png"
        save_image(render(model, rng, size), p)
        records.append(ManifestRecord(str(p), source.name, "toy-unknown", f"{source.name}-unknown"))
    return records


def probe_batch(n: int = 4, size: int = 64, seed: int = 0) -> np.ndarray:
    """Deterministic uint8 images (n, size, size, 3) used for checkpoint round-trip checks."""
    rng = np.random.default_rng(seed)
    return np.stack([render(DEFAULT_SOURCES[i % len(DEFAULT_SOURCES)], rng, size) for i in range(n)])
