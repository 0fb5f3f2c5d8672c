"""Image decoding and the pixel preprocessing shared by training and inference."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import ImageDecodeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class Preprocessing:
    """Resize + scaling recipe; stored in checkpoints so inference matches training.

    Pixels are resized bilinearly to ``side x side``, divided by 255 and then
    standardized per channel with ``mean``/``std``.
    """

    side: int
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    resample: str = "bilinear"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessing":
        return cls(
            side=int(d["side"]),
            mean=tuple(float(v) for v in d["mean"]),
            std=tuple(float(v) for v in d["std"]),
            resample=d.get("resample", "bilinear"),
        )


def load_image(path) -> np.ndarray:
    """Decode an image file into an RGB uint8 array of shape (H, W, 3)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise ImageDecodeError(path, "file not found") from None
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(path, exc) from exc
    return arr


def save_image(arr: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8)).save(path)


def preprocess(image: np.ndarray, prep: Preprocessing) -> torch.Tensor:
    """uint8 (H, W, 3) array -> float32 tensor (3, side, side)."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ImageDecodeError("<array>", f"expected uint8 HxWx3, got {image.dtype} {image.shape}")
    if image.shape[0] != prep.side or image.shape[1] != prep.side:
        im = Image.fromarray(image).resize((prep.side, prep.side), Image.BILINEAR)
        image = np.asarray(im, dtype=np.uint8)
    x = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
    mean = torch.tensor(prep.mean, dtype=torch.float32).view(3, 1, 1)
    std = torch.tensor(prep.std, dtype=torch.float32).view(3, 1, 1)
    return ((x - mean) / std).contiguous()


def load_tensor(path, prep: Preprocessing) -> torch.Tensor:
    return preprocess(load_image(path), prep)
