"""Synthetic two-modality concept world.

A world holds a set of latent concepts, one unit vocabulary per modality,
per-concept manifestation distributions over assigned unit subsets, a
slot-template composition rule with per-slot noise, and a balanced label
map over valid concept sequences. Instances are ordered unit-id sequences;
cross-modal pairs are built by manifesting the same concept sequence into
both modalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import RngStream

WORLD_FORMAT_VERSION = 1

# Spec'd floor on how many manifestations each modality must offer per concept.
MIN_VOCAB_RATIO = 4


@dataclass(frozen=True)
class WorldConfig:
    num_concepts: int = 20
    vocab_size1: int = 200
    vocab_size2: int = 200
    template_arity: int = 2
    slot_concepts: tuple[tuple[int, ...], ...] | None = None  # None = all concepts per slot
    num_classes: int = 40
    num_clusters: int = 10
    noise_rate: float = 0.05
    slot_noise1: tuple[float, ...] | None = None
    slot_noise2: tuple[float, ...] | None = None
    support_overlap: float = 0.0

    def validate(self) -> None:
        if self.num_concepts < 1:
            raise ConfigError("need at least one concept")
        for v, name in ((self.vocab_size1, "vocab_size1"), (self.vocab_size2, "vocab_size2")):
            if v < MIN_VOCAB_RATIO * self.num_concepts:
                raise ConfigError(
                    f"{name}={v} too small: must be >= {MIN_VOCAB_RATIO} x num_concepts "
                    f"({MIN_VOCAB_RATIO * self.num_concepts})"
                )
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not 1 <= self.template_arity <= 8:
            raise ConfigError("template arity must be in [1, 8]")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must be in [0, 1)")
        if not 0.0 <= self.support_overlap < 1.0:
            raise ConfigError("support_overlap must be in [0, 1)")
        if self.num_clusters < 1:
            raise ConfigError("need at least one cluster")
        for sn in (self.slot_noise1, self.slot_noise2):
            if sn is not None:
                if len(sn) != self.template_arity:
                    raise ConfigError("slot noise must have one rate per template slot")
                if any(not 0.0 <= r < 1.0 for r in sn):
                    raise ConfigError("slot noise rates must be in [0, 1)")
        if self.slot_concepts is not None:
            if len(self.slot_concepts) != self.template_arity:
                raise ConfigError("slot_concepts must match template arity")
            for slot in self.slot_concepts:
                if not slot or any(c < 0 or c >= self.num_concepts for c in slot):
                    raise ConfigError("each slot must allow at least one valid concept id")


@dataclass(frozen=True)
class ModalityInstance:
    """Ordered unit-id sequence in one modality.

    ``latent_concepts`` is oracle-side ground truth, kept out of anything
    the learner sees and out of the serialized record format.
    """

    modality: int
    units: tuple[int, ...]
    latent_concepts: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.modality not in (1, 2):
            raise DataError(f"modality must be 1 or 2, got {self.modality}")
        if not self.units:
            raise DataError("instance units must be non-empty")


@dataclass(frozen=True)
class UnitSet:
    """A subset of one modality's unit vocabulary."""

    modality: int
    units: frozenset[int]


@dataclass
class DatasetTriple:
    d1: list[tuple[ModalityInstance, int]]
    d2: list[tuple[ModalityInstance, int]]
    d3: list[tuple[ModalityInstance, ModalityInstance]]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.d1), len(self.d2), len(self.d3)


@dataclass
class ConceptWorld:
    """Fully specified generative world; immutable after build."""

    num_concepts: int
    vocab_sizes: tuple[int, int]
    template: tuple[tuple[int, ...], ...]
    supports: dict[int, list[np.ndarray]]      # modality -> per-concept unit ids
    probs: dict[int, list[np.ndarray]]         # modality -> per-concept probabilities
    slot_noise: dict[int, tuple[float, ...]]   # modality -> per-slot noise rate
    num_classes: int
    num_clusters: int
    label_table: np.ndarray                    # [num_sequences] class ids
    _class_seqs: list[list[int]] | None = field(default=None, repr=False, compare=False)

    @property
    def arity(self) -> int:
        return len(self.template)

    @property
    def num_sequences(self) -> int:
        n = 1
        for slot in self.template:
            n *= len(slot)
        return n

    def vocab_size(self, modality: int) -> int:
        return self.vocab_sizes[modality - 1]

    def sequence_index(self, concept_seq: tuple[int, ...]) -> int:
        if len(concept_seq) != self.arity:
            raise DataError(f"sequence arity {len(concept_seq)} != template arity {self.arity}")
        idx = 0
        for slot_allowed, c in zip(self.template, concept_seq):
            try:
                pos = slot_allowed.index(c)
            except ValueError:
                raise DataError(f"concept {c} not allowed in this slot") from None
            idx = idx * len(slot_allowed) + pos
        return idx

    def sequence_at(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.num_sequences:
            raise DataError(f"sequence index {index} out of range")
        out = []
        for slot_allowed in reversed(self.template):
            out.append(slot_allowed[index % len(slot_allowed)])
            index //= len(slot_allowed)
        return tuple(reversed(out))

    def label_of(self, concept_seq: tuple[int, ...]) -> int:
        return int(self.label_table[self.sequence_index(concept_seq)])

    def cluster_of(self, class_id: int) -> int:
        if not 0 <= class_id < self.num_classes:
            raise DataError(f"class id {class_id} out of range")
        return class_id % self.num_clusters

    def class_sequences(self, class_id: int) -> list[int]:
        """Sequence indices carrying the given label."""
        if self._class_seqs is None:
            table: list[list[int]] = [[] for _ in range(self.num_classes)]
            for i, lab in enumerate(self.label_table):
                table[int(lab)].append(i)
            self._class_seqs = table
        return self._class_seqs[class_id]

    def subset_emission_prob(self, modality: int, slot: int, concept: int, units: frozenset[int]) -> float:
        """P(emitted unit in ``units``) for one slot/concept, noise included."""
        rho = self.slot_noise[modality][slot]
        support = self.supports[modality][concept]
        p = self.probs[modality][concept]
        mask = np.isin(support, list(units))
        clean = float(p[mask].sum())
        return (1.0 - rho) * clean + rho * len(units) / self.vocab_size(modality)

    def to_json_dict(self) -> dict:
        return {
            "format_version": WORLD_FORMAT_VERSION,
            "num_concepts": self.num_concepts,
            "vocab_sizes": list(self.vocab_sizes),
            "template": [list(slot) for slot in self.template],
            "supports": {
                str(m): [[int(u) for u in s] for s in self.supports[m]] for m in (1, 2)
            },
            "probs": {
                str(m): [[float(x) for x in p] for p in self.probs[m]] for m in (1, 2)
            },
            "slot_noise": {str(m): list(self.slot_noise[m]) for m in (1, 2)},
            "num_classes": self.num_classes,
            "num_clusters": self.num_clusters,
            "label_table": [int(x) for x in self.label_table],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConceptWorld":
        version = doc.get("format_version")
        if version != WORLD_FORMAT_VERSION:
            raise DataError(f"unsupported world format_version {version!r}")
        world = cls(
            num_concepts=int(doc["num_concepts"]),
            vocab_sizes=tuple(doc["vocab_sizes"]),
            template=tuple(tuple(s) for s in doc["template"]),
            supports={
                m: [np.asarray(s, dtype=np.int64) for s in doc["supports"][str(m)]] for m in (1, 2)
            },
            probs={
                m: [np.asarray(p, dtype=np.float64) for p in doc["probs"][str(m)]] for m in (1, 2)
            },
            slot_noise={m: tuple(doc["slot_noise"][str(m)]) for m in (1, 2)},
            num_classes=int(doc["num_classes"]),
            num_clusters=int(doc["num_clusters"]),
            label_table=np.asarray(doc["label_table"], dtype=np.int64),
        )
        world.validate()
        return world

    def validate(self) -> None:
        for m in (1, 2):
            if len(self.supports[m]) != self.num_concepts:
                raise DataError("one support per concept required")
            for c in range(self.num_concepts):
                s, p = self.supports[m][c], self.probs[m][c]
                if s.size == 0:
                    raise DataError(f"concept {c} has an empty modality-{m} support")
                if s.size != p.size:
                    raise DataError(f"concept {c} modality-{m} support/probs size mismatch")
                if np.any(s < 0) or np.any(s >= self.vocab_size(m)):
                    raise DataError(f"concept {c} modality-{m} support out of vocabulary")
                if abs(float(p.sum()) - 1.0) > 1e-9:
                    raise DataError(f"concept {c} modality-{m} probabilities do not sum to 1")
        if self.label_table.size != self.num_sequences:
            raise DataError("label table must cover every valid concept sequence")
        if np.any(self.label_table < 0) or np.any(self.label_table >= self.num_classes):
            raise DataError("label table contains out-of-range class ids")


def _build_supports(vocab: int, num_concepts: int, overlap: float) -> list[np.ndarray]:
    """Partition the vocabulary into contiguous per-concept blocks, optionally
    extended into the next block by an overlap fraction."""
    base = vocab // num_concepts
    rem = vocab % num_concepts
    starts = []
    pos = 0
    sizes = []
    for c in range(num_concepts):
        size = base + (1 if c < rem else 0)
        starts.append(pos)
        sizes.append(size)
        pos += size
    supports = []
    extra = int(round(overlap * base))
    for c in range(num_concepts):
        block = list(range(starts[c], starts[c] + sizes[c]))
        if extra > 0:
            nxt = (c + 1) % num_concepts
            block.extend((starts[nxt] + k) % vocab for k in range(min(extra, sizes[nxt])))
        supports.append(np.asarray(sorted(set(block)), dtype=np.int64))
    return supports


def build_world(config: WorldConfig, rng: RngStream) -> ConceptWorld:
    """Deterministically build a world from a config and a stream.

    Draw order: modality-1 concept weights (concept 0..M-1), modality-2
    concept weights, then the label permutation.
    """
    config.validate()
    template = config.slot_concepts or tuple(
        tuple(range(config.num_concepts)) for _ in range(config.template_arity)
    )
    num_sequences = 1
    for slot in template:
        num_sequences *= len(slot)

    supports = {
        1: _build_supports(config.vocab_size1, config.num_concepts, config.support_overlap),
        2: _build_supports(config.vocab_size2, config.num_concepts, config.support_overlap),
    }
    probs: dict[int, list[np.ndarray]] = {1: [], 2: []}
    for m in (1, 2):
        for c in range(config.num_concepts):
            # weights bounded away from zero so every support unit stays reachable
            w = 0.5 + rng.uniform_array(supports[m][c].size)
            probs[m].append(w / w.sum())

    perm = rng.permutation(num_sequences)
    label_table = np.asarray([perm[i] % config.num_classes for i in range(num_sequences)], dtype=np.int64)

    slot_noise = {
        1: config.slot_noise1 or tuple([config.noise_rate] * config.template_arity),
        2: config.slot_noise2 or tuple([config.noise_rate] * config.template_arity),
    }
    world = ConceptWorld(
        num_concepts=config.num_concepts,
        vocab_sizes=(config.vocab_size1, config.vocab_size2),
        template=template,
        supports=supports,
        probs=probs,
        slot_noise=slot_noise,
        num_classes=config.num_classes,
        num_clusters=config.num_clusters,
        label_table=label_table,
    )
    world.validate()
    return world


def manifest(world: ConceptWorld, concept_id: int, modality: int, rng: RngStream) -> int:
    """Sample one unit from a concept's manifestation distribution."""
    if not 0 <= concept_id < world.num_concepts:
        raise DataError(f"concept id {concept_id} out of range [0, {world.num_concepts})")
    idx = rng.choice_weighted(world.probs[modality][concept_id])
    return int(world.supports[modality][concept_id][idx])


def compose_instance(
    world: ConceptWorld, concept_seq: tuple[int, ...], modality: int, rng: RngStream
) -> ModalityInstance:
    """Manifest each slot in template order, then apply per-slot noise.

    Draw order per slot: manifestation draw, noise coin, then (only when
    the coin fires) a uniform replacement unit.
    """
    if len(concept_seq) != world.arity:
        raise DataError(f"sequence arity {len(concept_seq)} != template arity {world.arity}")
    units = []
    noise = world.slot_noise[modality]
    for slot, c in enumerate(concept_seq):
        u = manifest(world, c, modality, rng)
        if rng.uniform() < noise[slot]:
            u = rng.randint(world.vocab_size(modality))
        units.append(u)
    return ModalityInstance(modality=modality, units=tuple(units), latent_concepts=tuple(concept_seq))


def syntax_validity(world: ConceptWorld, a: UnitSet, b: UnitSet) -> float:
    """Probability that a uniformly drawn valid concept sequence manifests a
    unit of ``a`` in some slot i and a unit of ``b`` in slot i+1.

    Closed form: for each sequence, a forward pass over slots tracks
    P(success so far, previous unit in ``a``) using per-slot subset
    emission probabilities; the result is averaged over all sequences.
    Reduces to P(slot0 in a) * P(slot1 in b) for 2-slot templates.
    """
    if a.modality != b.modality:
        raise DataError("mixed-modality subsets")
    m = a.modality
    vocab = world.vocab_size(m)
    for s in (a, b):
        if any(u < 0 or u >= vocab for u in s.units):
            raise DataError("subset contains out-of-vocabulary unit ids")
    if world.arity < 2:
        return 0.0

    both = a.units & b.units
    # per (slot, concept): cell probabilities over (in a?, in b?)
    cells: list[dict[int, tuple[float, float, float]]] = []
    for slot in range(world.arity):
        per_concept = {}
        for c in set(world.template[slot]):
            qa = world.subset_emission_prob(m, slot, c, a.units)
            qb = world.subset_emission_prob(m, slot, c, b.units)
            qab = world.subset_emission_prob(m, slot, c, both) if both else 0.0
            per_concept[c] = (qa, qb, qab)
        cells.append(per_concept)

    total = 0.0
    for index in range(world.num_sequences):
        seq = world.sequence_at(index)
        # state: [success][prev_in_a]
        state = np.zeros((2, 2), dtype=np.float64)
        state[0, 0] = 1.0
        for slot, c in enumerate(seq):
            qa, qb, qab = cells[slot][c]
            p_both = qab
            p_aonly = qa - qab
            p_bonly = qb - qab
            p_none = 1.0 - qa - qb + qab
            nxt = np.zeros((2, 2), dtype=np.float64)
            for s in (0, 1):
                for pa in (0, 1):
                    mass = state[s, pa]
                    if mass == 0.0:
                        continue
                    for p_cell, in_a, in_b in (
                        (p_both, 1, 1),
                        (p_aonly, 1, 0),
                        (p_bonly, 0, 1),
                        (p_none, 0, 0),
                    ):
                        new_s = 1 if (s or (pa and in_b)) else 0
                        nxt[new_s, in_a] += mass * p_cell
            state = nxt
        total += state[1, 0] + state[1, 1]
    return min(1.0, max(0.0, total / world.num_sequences))


def oracle_pair_score(x1: ModalityInstance, x2: ModalityInstance) -> float:
    """Jaccard overlap of the latent concept sets; symmetric, in [0, 1]."""
    if x1.latent_concepts is None or x2.latent_concepts is None:
        raise DataError("oracle_pair_score requires latent concepts")
    s1, s2 = set(x1.latent_concepts), set(x2.latent_concepts)
    return len(s1 & s2) / len(s1 | s2)


def sample_datasets(
    world: ConceptWorld, sizes: tuple[int, int, int], rng: RngStream
) -> DatasetTriple:
    """Sample the labeled/labeled/paired dataset triple.

    d1/d2 labels are stratified (shuffled round-robin over classes, with a
    uniform sequence within the class) so class balance stays within the
    contract; d3 pairs manifest one shared uniform concept sequence into
    both modalities, so their latent overlap is always exactly 1.
    """
    n1, n2, n3 = sizes
    if min(n1, n2, n3) < 0:
        raise DataError("dataset sizes must be non-negative")

    nonempty = [c for c in range(world.num_classes) if world.class_sequences(c)]
    if not nonempty:
        raise DataError("no class has any valid concept sequence")

    def labeled(n: int, modality: int, stream: RngStream) -> list[tuple[ModalityInstance, int]]:
        if n == 0:
            return []
        class_order = [nonempty[i] for i in stream.permutation(len(nonempty))]
        out = []
        for i in range(n):
            cls = class_order[i % len(class_order)]
            seqs = world.class_sequences(cls)
            seq = world.sequence_at(seqs[stream.randint(len(seqs))])
            out.append((compose_instance(world, seq, modality, stream), cls))
        return out

    d1 = labeled(n1, 1, rng.fork("d1"))
    d2 = labeled(n2, 2, rng.fork("d2"))

    r3 = rng.fork("d3")
    d3 = []
    for _ in range(n3):
        seq = world.sequence_at(r3.randint(world.num_sequences))
        x1 = compose_instance(world, seq, 1, r3)
        x2 = compose_instance(world, seq, 2, r3)
        d3.append((x1, x2))
    return DatasetTriple(d1=d1, d2=d2, d3=d3)
