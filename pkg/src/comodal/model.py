"""Model container: two encoders plus the shared classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .decoders import ClassifierParams, init_classifier
from .encoders import EncoderParams, init_encoder
from .errors import ConfigError
from .rng import RngStream


@dataclass
class AlignmentModel:
    enc1: EncoderParams
    enc2: EncoderParams
    classifier: ClassifierParams
    hyper: dict | None = None  # canonical train-config section, informational

    def __post_init__(self) -> None:
        if self.enc1.modality != 1 or self.enc2.modality != 2:
            raise ConfigError("enc1/enc2 must carry modalities 1 and 2")
        if self.enc1.output_dim != self.enc2.output_dim:
            raise ConfigError(
                f"encoder output dims differ ({self.enc1.output_dim} vs {self.enc2.output_dim}); "
                "the coordinated space must be shared"
            )
        if self.classifier.input_dim != self.enc1.output_dim:
            raise ConfigError("classifier input dim must equal the coordinated-space dim")

    def encoder(self, modality: int) -> EncoderParams:
        return self.enc1 if modality == 1 else self.enc2

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.enc1.tensors():
            yield f"enc1.{name}", arr
        for name, arr in self.enc2.tensors():
            yield f"enc2.{name}", arr
        for name, arr in self.classifier.tensors():
            yield f"classifier.{name}", arr

    def clone(self) -> "AlignmentModel":
        return AlignmentModel(
            enc1=self.enc1.clone(),
            enc2=self.enc2.clone(),
            classifier=self.classifier.clone(),
            hyper=None if self.hyper is None else dict(self.hyper),
        )


def init_model(
    vocab_sizes: tuple[int, int],
    dims: tuple[int, int, int],
    num_classes: int,
    rng: RngStream,
    position_slots: int = 0,
) -> AlignmentModel:
    """Build a fresh model from forks of ``rng``: enc1, enc2, classifier."""
    enc1 = init_encoder(vocab_sizes[0], dims, rng.fork("enc1"), modality=1, position_slots=position_slots)
    enc2 = init_encoder(vocab_sizes[1], dims, rng.fork("enc2"), modality=2, position_slots=position_slots)
    clf = init_classifier(dims[2], num_classes, rng.fork("clf"))
    return AlignmentModel(enc1=enc1, enc2=enc2, classifier=clf)
