import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from comodal import ConceptWorld, WorldConfig, build_world
from comodal.rng import rng_fork

settings.register_profile(
    "det",
    derandomize=True,
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("det")


@pytest.fixture(scope="session")
def tiny_world() -> ConceptWorld:
    cfg = WorldConfig(
        num_concepts=3, vocab_size1=12, vocab_size2=12, num_classes=4, noise_rate=0.1
    )
    return build_world(cfg, rng_fork(7, "world"))


@pytest.fixture(scope="session")
def clean_world() -> ConceptWorld:
    cfg = WorldConfig(
        num_concepts=3, vocab_size1=12, vocab_size2=12, num_classes=4, noise_rate=0.0
    )
    return build_world(cfg, rng_fork(7, "world"))


def manual_world(
    supports1, probs1, supports2, probs2, template, slot_noise1, slot_noise2,
    vocab1, vocab2, num_classes=2, label_table=None,
) -> ConceptWorld:
    """Construct a world directly, bypassing build_world's vocab-ratio floor;
    used for degenerate-distribution oracle tests."""
    n = len(supports1)
    num_seq = 1
    for slot in template:
        num_seq *= len(slot)
    if label_table is None:
        label_table = [i % num_classes for i in range(num_seq)]
    return ConceptWorld(
        num_concepts=n,
        vocab_sizes=(vocab1, vocab2),
        template=tuple(tuple(s) for s in template),
        supports={1: [np.asarray(s) for s in supports1], 2: [np.asarray(s) for s in supports2]},
        probs={1: [np.asarray(p, dtype=np.float64) for p in probs1],
               2: [np.asarray(p, dtype=np.float64) for p in probs2]},
        slot_noise={1: tuple(slot_noise1), 2: tuple(slot_noise2)},
        num_classes=num_classes,
        num_clusters=2,
        label_table=np.asarray(label_table),
    )
