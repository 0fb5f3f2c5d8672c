"""Siamese verification network: shared embedding branch, distance layer, decision head.

Scores are oriented so that low ``p`` means "same architecture"; the binary
decision is ``m_hat = 0`` iff ``p < 0.5``.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, CheckpointVersionError, ContractError, NumericError
from .imaging import IMAGENET_MEAN, IMAGENET_STD, Preprocessing

EMBEDDING_DIM = 512
DECISION_WIDTHS = (256, 64, 1)
CHECKPOINT_VERSION = 1
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class BackboneSpec:
    identifier: str
    input_side: int
    pretrained: bool = False

    def __post_init__(self):
        if not self.identifier:
            raise ContractError("backbone identifier must be non-empty")
        if int(self.input_side) <= 0:
            raise ContractError(f"input_side must be positive, got {self.input_side}")


# ---------------------------------------------------------------------------
# backbone registry


@dataclass
class _BackboneEntry:
    build: Callable[[bool], tuple[nn.Module, int]]
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


BACKBONES: dict[str, _BackboneEntry] = {}


def register_backbone(identifier, build, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Register ``build(pretrained) -> (module, flat_feature_count_or_None)``.

    A feature count of ``None`` means it depends on input size and is probed.
    """
    BACKBONES[identifier] = _BackboneEntry(build, tuple(mean), tuple(std))


def _toy_cnn(pretrained: bool):
    if pretrained:
        raise ContractError("toy-cnn has no pretrained weights")

    def block(cin, cout, stride):
        return [nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU()]

    layers = [
        *block(3, 16, 1),
        *block(16, 32, 2),
        *block(32, 32, 2),
        *block(32, 64, 2),
        nn.AdaptiveAvgPool2d(2),
        nn.Flatten(),
    ]
    return nn.Sequential(*layers), 64 * 4


def _efficientnet_b4(pretrained: bool):
    from torchvision.models import EfficientNet_B4_Weights, efficientnet_b4

    net = efficientnet_b4(weights=EfficientNet_B4_Weights.IMAGENET1K_V1 if pretrained else None)
    return nn.Sequential(net.features, net.avgpool, nn.Flatten()), 1792


def _resnet50(pretrained: bool):
    from torchvision.models import ResNet50_Weights, resnet50

    net = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2 if pretrained else None)
    net.fc = nn.Identity()
    return net, 2048


register_backbone("toy-cnn", _toy_cnn, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
register_backbone("efficientnet-b4", _efficientnet_b4)
register_backbone("resnet50", _resnet50)


def default_preprocessing(spec: BackboneSpec) -> Preprocessing:
    entry = _lookup_backbone(spec.identifier)
    return Preprocessing(side=spec.input_side, mean=entry.mean, std=entry.std)


def _lookup_backbone(identifier) -> _BackboneEntry:
    try:
        return BACKBONES[identifier]
    except KeyError:
        raise ContractError(
            f"unknown backbone {identifier!r}; registered: {', '.join(sorted(BACKBONES))}"
        ) from None


# ---------------------------------------------------------------------------
# model


def l2_normalize(e: torch.Tensor) -> torch.Tensor:
    return F.normalize(e, p=2.0, dim=-1, eps=1e-12)


NORMALIZERS = {"l2": l2_normalize, "identity": lambda e: e}


def _check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite activations at layer '{name}'")
    return t


class SiameseModel(nn.Module):
    """Two weight-tied branches (one stored copy) plus a dense decision head.

    The branch is ``backbone -> flatten -> dense(512)``; the embedding is then
    normalized, the two embeddings are compared by pointwise absolute difference
    and the result is mapped by dense layers 256 -> 64 -> 1 and a sigmoid.
    """

    def __init__(self, backbone: BackboneSpec, preprocessing: Preprocessing | None = None,
                 normalization: str = "l2"):
        super().__init__()
        if normalization not in NORMALIZERS:
            raise ContractError(f"unknown normalization {normalization!r}")
        self.spec = backbone
        self.preprocessing = preprocessing or default_preprocessing(backbone)
        self.normalization = normalization
        self.version = CHECKPOINT_VERSION
        # phase bookkeeping persisted in checkpoints
        self.training_state = {"phase1_done": False, "phase2_done": False}

        module, n_feat = _lookup_backbone(backbone.identifier).build(backbone.pretrained)
        self.backbone = module
        if n_feat is None:
            with torch.no_grad():
                probe = torch.zeros(1, 3, backbone.input_side, backbone.input_side)
                n_feat = module.eval()(probe).flatten(1).shape[1]
        self.embedding_head = nn.Linear(n_feat, EMBEDDING_DIM)
        self.decision_head = nn.Sequential(
            nn.Linear(EMBEDDING_DIM, DECISION_WIDTHS[0]),
            nn.ReLU(),
            nn.Linear(DECISION_WIDTHS[0], DECISION_WIDTHS[1]),
            nn.ReLU(),
            nn.Linear(DECISION_WIDTHS[1], DECISION_WIDTHS[2]),
        )

    # -- batched building blocks (used by training) --

    def embed_batch(self, x: torch.Tensor, check: bool = True) -> torch.Tensor:
        """Raw (pre-normalization) embeddings for a batch (N, 3, S, S)."""
        if check:
            h = x
            layers = list(self.backbone.named_children()) or [("0", self.backbone)]
            for name, layer in layers:
                h = _check_finite(f"backbone.{name}", layer(h))
            h = _check_finite("embedding_head", self.embedding_head(h.flatten(1)))
            return h
        return self.embedding_head(self.backbone(x).flatten(1))

    def normalize(self, e: torch.Tensor) -> torch.Tensor:
        return NORMALIZERS[self.normalization](e)

    def distance(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        return (self.normalize(e1) - self.normalize(e2)).abs()

    def logits(self, d: torch.Tensor) -> torch.Tensor:
        return self.decision_head(d).squeeze(-1)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Probability scores for a batch of pairs."""
        return torch.sigmoid(self.logits(self.distance(self.embed_batch(x), self.embed_batch(y))))

    def embedding_modules(self) -> list[nn.Module]:
        return [self.backbone, self.embedding_head]

    def embedding_parameters(self):
        for m in self.embedding_modules():
            yield from m.parameters()


@contextlib.contextmanager
def inference(model: nn.Module):
    """Eval mode + no grad for the duration, restoring the previous mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.inference_mode():
            yield model
    finally:
        model.train(was_training)


def _as_single(image: torch.Tensor, side: int) -> torch.Tensor:
    if not isinstance(image, torch.Tensor):
        raise ContractError(f"expected a preprocessed image tensor, got {type(image).__name__}")
    if image.dim() == 4 and image.shape[0] == 1:
        image = image[0]
    if image.dim() != 3 or image.shape[0] != 3 or image.shape[1] != side or image.shape[2] != side:
        raise ContractError(f"expected image tensor of shape (3, {side}, {side}), got {tuple(image.shape)}")
    return image.unsqueeze(0).float()


def embed(model: SiameseModel, image: torch.Tensor) -> torch.Tensor:
    """Raw 512-d embedding of one preprocessed image (before normalization)."""
    x = _as_single(image, model.spec.input_side)
    with inference(model):
        return model.embed_batch(x)[0].clone()


def _as_embedding(e) -> torch.Tensor:
    e = torch.as_tensor(e, dtype=torch.float32)
    if e.dim() != 1:
        raise ContractError(f"embedding must be 1-D, got shape {tuple(e.shape)}")
    if not torch.isfinite(e).all():
        raise ContractError("embedding contains non-finite values")
    return e


def pair_distance(e1, e2, normalization: str = "l2") -> torch.Tensor:
    """Pointwise ``|norm(e1) - norm(e2)|``."""
    e1, e2 = _as_embedding(e1), _as_embedding(e2)
    if e1.shape != e2.shape:
        raise ContractError(f"embedding length mismatch: {e1.shape[0]} vs {e2.shape[0]}")
    if e1.shape[0] != EMBEDDING_DIM:
        raise ContractError(f"embeddings must have {EMBEDDING_DIM} elements, got {e1.shape[0]}")
    norm = NORMALIZERS[normalization]
    return (norm(e1) - norm(e2)).abs()


def decide(model: SiameseModel, d) -> float:
    d = torch.as_tensor(d, dtype=torch.float32)
    if d.shape != (EMBEDDING_DIM,):
        raise ContractError(f"distance vector must have shape ({EMBEDDING_DIM},), got {tuple(d.shape)}")
    with inference(model):
        p = torch.sigmoid(model.logits(d.unsqueeze(0)))[0]
    if not torch.isfinite(p):
        raise NumericError("non-finite output at layer 'decision_head'")
    return float(p)


def decision_label(p: float) -> int:
    """0 = same architecture; the boundary p == 0.5 is 'different'."""
    return 0 if p < DECISION_THRESHOLD else 1


def verify_pair(model: SiameseModel, x: torch.Tensor, y: torch.Tensor) -> tuple[float, int]:
    d = pair_distance(embed(model, x), embed(model, y), model.normalization)
    p = decide(model, d)
    return p, decision_label(p)


# ---------------------------------------------------------------------------
# checkpoints

_META_KEY = "__meta__"


def _meta(model: SiameseModel, extra: dict | None) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "backbone": asdict(model.spec),
        "preprocessing": model.preprocessing.to_dict(),
        "normalization": model.normalization,
        "training_state": dict(model.training_state),
        "extra": extra or {},
    }


def save_checkpoint(model: SiameseModel, path, extra: dict | None = None) -> str:
    """Write a single-file checkpoint; returns its sha256 hex digest."""
    path = Path(path)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = json.dumps(_meta(model, extra), sort_keys=True).encode("utf-8")
    arrays[_META_KEY] = np.frombuffer(meta, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return file_sha256(path)


def load_checkpoint(path) -> SiameseModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except Exception as exc:  # zipfile/EOF/format errors all mean corruption
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if _META_KEY not in arrays:
        raise CheckpointError(f"corrupt checkpoint {path}: missing metadata")
    try:
        meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8"))
        version = int(meta["format_version"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: bad metadata ({exc})") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)

    spec = BackboneSpec(**{**meta["backbone"], "pretrained": False})
    model = SiameseModel(spec, Preprocessing.from_dict(meta["preprocessing"]), meta["normalization"])
    model.spec = BackboneSpec(**meta["backbone"])
    model.training_state.update(meta.get("training_state", {}))
    try:
        state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    model.eval()
    return model


def checkpoint_extra(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(z[_META_KEY].tobytes().decode("utf-8")).get("extra", {})


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def embedding_state_hash(model: SiameseModel) -> str:
    """Hash of every parameter and buffer feeding the embedding (branch + dense head)."""
    h = hashlib.sha256()
    for prefix, module in (("backbone", model.backbone), ("embedding_head", model.embedding_head)):
        for name, t in sorted(module.state_dict().items()):
            h.update(f"{prefix}.{name}".encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def build_model(identifier: str = "toy-cnn", input_side: int = 64, pretrained: bool = False,
                seed: int | None = None, normalization: str = "l2") -> SiameseModel:
    if seed is not None:
        torch.manual_seed(seed)
    return SiameseModel(BackboneSpec(identifier, input_side, pretrained), normalization=normalization)
