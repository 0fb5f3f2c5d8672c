"""Pair scorers: anything callable as ``scorer(x, y) -> p`` on manifest records.

Protocols and the verification flow only ever call a scorer, so tests can swap
in a stub. :class:`ModelScorer` backs it with a trained network and caches one
embedding per image; every image is embedded alone (batch of one) so a score
never depends on what else was evaluated alongside it.
"""

from __future__ import annotations

import os
from typing import Callable, Protocol, Union

import numpy as np
import torch

from .data import ManifestRecord
from .imaging import load_tensor
from .model import SiameseModel, decide, embed, pair_distance

ImageRef = Union[str, os.PathLike, ManifestRecord, torch.Tensor]


class PairScorer(Protocol):
    def __call__(self, x, y) -> float: ...


def _path(ref) -> str:
    if isinstance(ref, ManifestRecord):
        return ref.path
    return os.fspath(ref)


class ModelScorer:
    def __init__(self, model: SiameseModel):
        self.model = model
        self._cache: dict[str, torch.Tensor] = {}

    def embedding(self, ref: ImageRef) -> torch.Tensor:
        """Raw embedding; paths and records are decoded with the model's own preprocessing."""
        if isinstance(ref, torch.Tensor):
            return embed(self.model, ref)
        key = _path(ref)
        e = self._cache.get(key)
        if e is None:
            e = embed(self.model, load_tensor(key, self.model.preprocessing))
            self._cache[key] = e
        return e

    def score_embeddings(self, e1, e2) -> float:
        return decide(self.model, pair_distance(e1, e2, self.model.normalization))

    def __call__(self, x: ImageRef, y: ImageRef) -> float:
        return self.score_embeddings(self.embedding(x), self.embedding(y))

    def normalized(self, ref: ImageRef) -> np.ndarray:
        return self.model.normalize(self.embedding(ref)).numpy().astype(np.float64)


def as_scorer(model_or_scorer) -> Callable:
    if isinstance(model_or_scorer, SiameseModel):
        return ModelScorer(model_or_scorer)
    if callable(model_or_scorer):
        return model_or_scorer
    raise TypeError(f"expected a SiameseModel or a callable scorer, got {type(model_or_scorer).__name__}")
