"""Siamese verification of the generative architecture behind synthetic images."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    DatasetManifest,
    ManifestRecord,
    PairSample,
    SplitConfig,
    SplitSet,
    build_pair_dataset,
    build_splits,
    load_manifest,
)
from .model import (  # noqa: E402
    BackboneSpec,
    SiameseModel,
    build_model,
    decide,
    embed,
    load_checkpoint,
    pair_distance,
    save_checkpoint,
    verify_pair,
)
from .training import TrainingHyperparams, bce_loss, contrastive_loss, train_phase1, train_phase2  # noqa: E402
from .verification import Claim, FusionStrategy, ReferenceSet, Verdict, fuse_scores, verify_claim  # noqa: E402
