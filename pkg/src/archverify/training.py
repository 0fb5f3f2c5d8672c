"""Losses and the two-phase training procedure.

Phase 1 fits the shared branch (backbone + 512-d dense layer) with the
contrastive loss on normalized embeddings. Phase 2 freezes the branch and fits
the decision head with binary cross-entropy. Both phases early-stop on their
own validation loss and restore the best epoch.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationPolicy, augment
from .data import PairSample, derive_rng
from .errors import ConfigError, ContractError, NumericError, TrainingDivergedError
from .imaging import load_image, preprocess
from .metrics import accuracy_scores, roc_auc
from .model import SiameseModel, embedding_state_hash

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


def contrastive_loss(e1, e2, m, h: float = 1.0, reduction: str = "mean") -> torch.Tensor:
    """``(1 - m) * d^2 + m * max(0, h - d)^2`` with ``d`` the Euclidean distance.

    Accepts single vectors (D,) or batches (N, D). Embeddings are used as given;
    callers pass normalized embeddings.
    """
    e1 = torch.as_tensor(e1)
    e2 = torch.as_tensor(e2)
    if h <= 0:
        raise ContractError(f"margin must be positive, got {h}")
    if not (torch.isfinite(e1).all() and torch.isfinite(e2).all()):
        raise NumericError("contrastive loss received non-finite embeddings")
    m = torch.as_tensor(m, dtype=e1.dtype, device=e1.device)
    sq = ((e1 - e2) ** 2).sum(-1)
    # sqrt has an infinite derivative at 0; route zero distances through a dummy value
    pos = sq > 0
    d = torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    loss = (1 - m) * sq + m * torch.clamp(h - d, min=0) ** 2
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


def bce_loss(p, m, eps: float = BCE_EPS, reduction: str = "mean") -> torch.Tensor:
    """Binary cross-entropy with target ``m`` (1 = different); ``p`` clamped to [eps, 1 - eps]."""
    p = p if isinstance(p, torch.Tensor) and p.is_floating_point() else torch.as_tensor(p, dtype=torch.float64)
    m = torch.as_tensor(m, dtype=p.dtype, device=p.device)
    pc = p.clamp(eps, 1 - eps)
    loss = -(m * torch.log(pc) + (1 - m) * torch.log(1 - pc))
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


def bce_with_logits(logits, m, eps: float = BCE_EPS) -> torch.Tensor:
    """Same objective from pre-sigmoid values, unclamped, so saturated mistakes keep their gradient."""
    return F.binary_cross_entropy_with_logits(logits, torch.as_tensor(m, dtype=logits.dtype))


@dataclass
class TrainingHyperparams:
    margin: float = 1.0
    lr: float = 1e-4
    phase2_lr: float | None = None
    phase1_epochs: int = 100
    phase2_epochs: int = 20
    batch_size: int = 32
    early_stop_patience: int = 10
    phase2_patience: int = 5
    seed: int = 0
    augment_phase2: bool = True

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.lr <= 0 or (self.phase2_lr is not None and self.phase2_lr <= 0):
            raise ConfigError("learning rates must be > 0")
        if self.phase1_epochs < 1 or self.phase2_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.early_stop_patience < 1 or self.phase2_patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingHyperparams":
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def add_epoch(self, phase, epoch, train_loss, val_loss, val_metric, wall_time):
        for prev in reversed(self.records):
            if prev.get("phase") == phase and "epoch" in prev and prev.get("event") == "epoch":
                if epoch <= prev["epoch"]:
                    raise ContractError("epochs must increase within a phase")
                break
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericError("non-finite loss in training log")
        self.records.append({
            "event": "epoch", "phase": phase, "epoch": epoch, "train_loss": float(train_loss),
            "val_loss": float(val_loss), "val_metric": float(val_metric), "wall_time": float(wall_time),
        })

    def mark(self, event, phase, **info):
        self.records.append({"event": event, "phase": phase, **info})

    def epochs(self, phase):
        return [r for r in self.records if r["event"] == "epoch" and r["phase"] == phase]

    def best_epoch(self, phase):
        for r in self.records:
            if r["event"] == "best" and r["phase"] == phase:
                return r["epoch"]
        return None

    def stopped_early(self, phase) -> bool:
        return any(r["event"] == "early_stop" and r["phase"] == phase for r in self.records)

    def write_jsonl(self, path):
        with open(path, "a", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")
            for w in self.warnings:
                f.write(json.dumps({"event": "warning", "message": w}) + "\n")


class ImageCache:
    """Decoded uint8 images keyed by path; decoding happens once."""

    def __init__(self):
        self._images: dict[str, np.ndarray] = {}

    def __call__(self, path: str) -> np.ndarray:
        img = self._images.get(path)
        if img is None:
            img = load_image(path)
            img.setflags(write=False)
            self._images[path] = img
        return img


class PairBatches:
    """Yields (x, y, m) tensors; augmentation draws from (seed, epoch, pair index, side)."""

    def __init__(self, model: SiameseModel, pairs: Sequence[PairSample], policy: AugmentationPolicy | None,
                 cache: ImageCache | None = None):
        self.model = model
        self.pairs = list(pairs)
        self.policy = policy
        self.cache = cache or ImageCache()

    def _tensor(self, path, seed, epoch, idx, side):
        img = self.cache(path)
        if self.policy is not None:
            img = augment(img, self.policy, derive_rng(seed, "aug", epoch, idx, side))
        return preprocess(img, self.model.preprocessing)

    def batches(self, batch_size, seed, epoch, shuffle):
        n = len(self.pairs)
        order = derive_rng(seed, "shuffle", epoch).permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xs, ys, ms = [], [], []
            for i in idx:
                pr = self.pairs[i]
                xs.append(self._tensor(pr.x.path, seed, epoch, int(i), 0))
                ys.append(self._tensor(pr.y.path, seed, epoch, int(i), 1))
                ms.append(pr.m)
            yield torch.stack(xs), torch.stack(ys), torch.tensor(ms, dtype=torch.float32)


def _check_loss(loss, phase, epoch, batch):
    if not torch.isfinite(loss):
        raise TrainingDivergedError(phase, epoch, batch, f"loss={loss.item()}")


def _snapshot(modules):
    return [copy.deepcopy(m.state_dict()) for m in modules]


def _restore(modules, states):
    for m, s in zip(modules, states):
        m.load_state_dict(s)


@torch.no_grad()
def _phase1_validation(model, val: PairBatches, hp):
    was = model.training
    model.eval()
    losses, dists, labels = [], [], []
    for x, y, m in val.batches(hp.batch_size, hp.seed, 0, shuffle=False):
        e1 = model.normalize(model.embed_batch(x))
        e2 = model.normalize(model.embed_batch(y))
        losses.append(contrastive_loss(e1, e2, m, hp.margin, reduction="none"))
        dists.append(torch.linalg.vector_norm(e1 - e2, dim=-1))
        labels.append(m)
    model.train(was)
    loss = float(torch.cat(losses).mean())
    d, lab = torch.cat(dists).numpy(), torch.cat(labels).numpy()
    try:
        metric = roc_auc(lab, d)
    except ValueError:
        metric = float("nan")
    return loss, metric


def train_phase1(model: SiameseModel, pairs: Sequence[PairSample], val_pairs: Sequence[PairSample],
                 hp: TrainingHyperparams, policy: AugmentationPolicy | None = None,
                 cache: ImageCache | None = None, log_: TrainingLog | None = None):
    """Fit branch weights with the contrastive loss. Returns ``(model, log)``.

    The decision head is not touched. ``policy=None`` disables augmentation.
    """
    if not pairs or not val_pairs:
        raise ContractError("phase 1 needs non-empty training and validation pairs")
    tlog = log_ if log_ is not None else TrainingLog()
    cache = cache or ImageCache()
    torch.manual_seed(hp.seed)
    train = PairBatches(model, pairs, policy, cache)
    val = PairBatches(model, val_pairs, None, cache)
    modules = model.embedding_modules()
    opt = torch.optim.Adam(list(model.embedding_parameters()), lr=hp.lr)
    head_before = copy.deepcopy(model.decision_head.state_dict())

    best_loss, _ = _phase1_validation(model, val, hp)
    best_state, best_epoch, bad = _snapshot(modules), 0, 0
    tlog.mark("start", 1, val_loss=best_loss)
    for epoch in range(1, hp.phase1_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for b, (x, y, m) in enumerate(train.batches(hp.batch_size, hp.seed, epoch, shuffle=True)):
            e1 = model.normalize(model.embed_batch(x, check=False))
            e2 = model.normalize(model.embed_batch(y, check=False))
            loss = contrastive_loss(e1, e2, m, hp.margin)
            _check_loss(loss, 1, epoch, b)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(m)
            count += len(m)
        val_loss, val_auc = _phase1_validation(model, val, hp)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(1, epoch, "validation")
        tlog.add_epoch(1, epoch, total / count, val_loss, val_auc, time.perf_counter() - t0)
        log.info("phase1 epoch %d train %.4f val %.4f auc %.4f", epoch, total / count, val_loss, val_auc)
        if val_loss < best_loss:
            best_loss, best_state, best_epoch, bad = val_loss, _snapshot(modules), epoch, 0
        else:
            bad += 1
            if bad >= hp.early_stop_patience:
                tlog.mark("early_stop", 1, epoch=epoch)
                break
    _restore(modules, best_state)
    model.decision_head.load_state_dict(head_before)
    model.eval()
    model.training_state["phase1_done"] = True
    tlog.mark("best", 1, epoch=best_epoch, val_loss=best_loss)
    return model, tlog


@torch.no_grad()
def _distances(model, batches: PairBatches, hp, epoch, shuffle):
    """Frozen-branch distance vectors for every pair of one epoch."""
    out = []
    for x, y, m in batches.batches(hp.batch_size, hp.seed, epoch, shuffle):
        out.append((model.distance(model.embed_batch(x), model.embed_batch(y)), m))
    return out


@torch.no_grad()
def _phase2_validation(model, val_d):
    model.decision_head.eval()
    logits = torch.cat([model.logits(d) for d, _ in val_d])
    labels = torch.cat([m for _, m in val_d])
    loss = float(bce_with_logits(logits, labels))
    acc = accuracy_scores(labels.numpy().astype(int), torch.sigmoid(logits).numpy())
    return loss, acc


def train_phase2(model: SiameseModel, pairs: Sequence[PairSample], val_pairs: Sequence[PairSample],
                 hp: TrainingHyperparams, policy: AugmentationPolicy | None = None,
                 cache: ImageCache | None = None, log_: TrainingLog | None = None):
    """Fit the decision head with BCE while the branch stays frozen (verified by hash)."""
    if not pairs or not val_pairs:
        raise ContractError("phase 2 needs non-empty training and validation pairs")
    tlog = log_ if log_ is not None else TrainingLog()
    if not model.training_state.get("phase1_done"):
        msg = "phase 2 started on a model without a completed phase 1"
        log.warning(msg)
        tlog.warnings.append(msg)
    cache = cache or ImageCache()
    torch.manual_seed(hp.seed + 1)
    frozen_hash = embedding_state_hash(model)
    for p in model.embedding_parameters():
        p.requires_grad_(False)
    for m in model.embedding_modules():
        m.eval()

    train = PairBatches(model, pairs, policy if hp.augment_phase2 else None, cache)
    val = PairBatches(model, val_pairs, None, cache)
    val_d = _distances(model, val, hp, 0, shuffle=False)
    fixed_train_d = None if train.policy is not None else _distances(model, train, hp, 0, shuffle=False)
    opt = torch.optim.Adam(model.decision_head.parameters(), lr=hp.phase2_lr or hp.lr)

    best_loss, _ = _phase2_validation(model, val_d)
    best_state, best_epoch, bad = _snapshot([model.decision_head]), 0, 0
    tlog.mark("start", 2, val_loss=best_loss)
    try:
        for epoch in range(1, hp.phase2_epochs + 1):
            t0 = time.perf_counter()
            if fixed_train_d is None:
                train_d = _distances(model, train, hp, epoch, shuffle=True)
            else:
                perm = derive_rng(hp.seed, "shuffle2", epoch).permutation(len(fixed_train_d))
                train_d = [fixed_train_d[i] for i in perm]
            model.decision_head.train()
            total, count = 0.0, 0
            for b, (d, m) in enumerate(train_d):
                loss = bce_with_logits(model.logits(d), m)
                _check_loss(loss, 2, epoch, b)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += loss.item() * len(m)
                count += len(m)
            val_loss, val_acc = _phase2_validation(model, val_d)
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(2, epoch, "validation")
            tlog.add_epoch(2, epoch, total / count, val_loss, val_acc, time.perf_counter() - t0)
            log.info("phase2 epoch %d train %.4f val %.4f acc %.4f", epoch, total / count, val_loss, val_acc)
            if val_loss < best_loss:
                best_loss, best_state, best_epoch, bad = val_loss, _snapshot([model.decision_head]), epoch, 0
            else:
                bad += 1
                if bad >= hp.phase2_patience:
                    tlog.mark("early_stop", 2, epoch=epoch)
                    break
        _restore([model.decision_head], best_state)
    finally:
        for p in model.embedding_parameters():
            p.requires_grad_(True)
    if embedding_state_hash(model) != frozen_hash:
        raise NumericError("embedding parameters changed during phase 2")
    model.eval()
    model.training_state["phase2_done"] = True
    tlog.mark("best", 2, epoch=best_epoch, val_loss=best_loss)
    return model, tlog
