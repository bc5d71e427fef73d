"""Persistence: binary checkpoints, world files, line-delimited dataset
files, and canonical report serialization.

Checkpoint layout: 6-byte magic ``BRNSH1``, a 4-byte little-endian header
length, a UTF-8 JSON header (format version, ordered tensor manifest,
model structure, config document + fingerprint, seed), then the payload of
raw little-endian float32 values concatenated in manifest order. Loading
is a bit-exact round trip.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .decoders import ClassifierParams
from .encoders import EncoderParams
from .errors import CheckpointError, DataError
from .kernel import DTYPE, MlpParams
from .model import AlignmentModel
from .world import ConceptWorld, DatasetTriple, ModalityInstance

CHECKPOINT_MAGIC = b"BRNSH1"
CHECKPOINT_VERSION = 1
DATASET_FORMAT_VERSION = 1


def canonical_json(doc: dict, pretty: bool = False) -> str:
    if pretty:
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# checkpoints


def _mlp_structure(mlp: MlpParams) -> dict:
    return {
        "dims": [mlp.in_dim] + [w.shape[0] for w, _ in mlp.layers],
        "activation": mlp.activation,
        "activate_final": mlp.activate_final,
    }


def _encoder_structure(enc: EncoderParams) -> dict:
    return {
        "modality": enc.modality,
        "vocab_size": enc.vocab_size,
        "embed_dim": enc.embed_dim,
        "position_slots": 0 if enc.slot_gains is None else int(enc.slot_gains.shape[0]),
        "mlp": _mlp_structure(enc.mlp),
    }


def save_checkpoint(
    model: AlignmentModel,
    path: str | Path,
    config_doc: dict | None = None,
    config_fingerprint: str = "",
    seed: int = 0,
) -> None:
    manifest = [(name, list(arr.shape)) for name, arr in model.tensors()]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "manifest": manifest,
        "model": {
            "enc1": _encoder_structure(model.enc1),
            "enc2": _encoder_structure(model.enc2),
            "classifier": {"mlp": _mlp_structure(model.classifier.mlp)},
        },
        "config": config_doc,
        "config_fingerprint": config_fingerprint,
        "seed": seed,
    }
    header_bytes = canonical_json(header).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype=DTYPE).astype("<f4").tobytes() for _, arr in model.tensors()
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _zeros_mlp(structure: dict) -> MlpParams:
    dims = structure["dims"]
    layers = [
        (np.zeros((dims[i + 1], dims[i]), dtype=DTYPE), np.zeros(dims[i + 1], dtype=DTYPE))
        for i in range(len(dims) - 1)
    ]
    return MlpParams(
        layers=layers,
        activation=structure["activation"],
        activate_final=structure["activate_final"],
    )


def _zeros_encoder(structure: dict) -> EncoderParams:
    slots = structure["position_slots"]
    return EncoderParams(
        modality=structure["modality"],
        unit_embeddings=np.zeros((structure["vocab_size"], structure["embed_dim"]), dtype=DTYPE),
        mlp=_zeros_mlp(structure["mlp"]),
        slot_gains=np.zeros((slots, structure["embed_dim"]), dtype=DTYPE) if slots else None,
    )


def load_checkpoint(path: str | Path) -> tuple[AlignmentModel, dict]:
    """Load a checkpoint; returns (model, header)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + header_len:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    offset += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")

    manifest = [(name, tuple(shape)) for name, shape in header["manifest"]]
    expected = sum(int(np.prod(shape)) for _, shape in manifest) * 4
    payload = raw[offset:]
    if len(payload) < expected:
        raise CheckpointError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise CheckpointError(f"manifest/payload length disagreement: {len(payload)} > {expected}")

    model = AlignmentModel(
        enc1=_zeros_encoder(header["model"]["enc1"]),
        enc2=_zeros_encoder(header["model"]["enc2"]),
        classifier=ClassifierParams(mlp=_zeros_mlp(header["model"]["classifier"]["mlp"])),
    )
    tensors = dict(model.tensors())
    pos = 0
    for name, shape in manifest:
        if name not in tensors:
            raise CheckpointError(f"manifest names unknown tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise CheckpointError(f"manifest shape {shape} != structural shape {arr.shape} for {name!r}")
        count = int(np.prod(shape))
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=pos).reshape(shape)
        arr[...] = values
        pos += count * 4
    return model, header


# ---------------------------------------------------------------------------
# world and dataset files


def save_world(world: ConceptWorld, path: str | Path) -> None:
    Path(path).write_text(canonical_json(world.to_json_dict(), pretty=True), encoding="utf-8")


def load_world(path: str | Path) -> ConceptWorld:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid world file {path}: {exc}") from exc
    return ConceptWorld.from_json_dict(doc)


def _record_line(instance: ModalityInstance, label: int | None, pair_id: int | None) -> str:
    rec: dict = {"modality": instance.modality, "units": list(instance.units)}
    if label is not None:
        rec["label"] = label
    if pair_id is not None:
        rec["pair_id"] = pair_id
    return json.dumps(rec, sort_keys=True)


def write_labeled(path: str | Path, labeled: list[tuple[ModalityInstance, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst, y in labeled:
            fh.write(_record_line(inst, y, None) + "\n")


def write_pairs(path: str | Path, pairs: list[tuple[ModalityInstance, ModalityInstance]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, (x1, x2) in enumerate(pairs):
            fh.write(_record_line(x1, None, i) + "\n")
            fh.write(_record_line(x2, None, i) + "\n")


def _parse_record(line: str, lineno: int, path, world: ConceptWorld | None) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    if not isinstance(rec, dict):
        raise DataError(f"{path}:{lineno}: record must be a JSON object")
    unknown = set(rec) - {"modality", "units", "label", "pair_id"}
    if unknown:
        raise DataError(f"{path}:{lineno}: unknown field(s) {sorted(unknown)}")
    modality = rec.get("modality")
    units = rec.get("units")
    if modality not in (1, 2):
        raise DataError(f"{path}:{lineno}: modality must be 1 or 2")
    if not isinstance(units, list) or not units or not all(isinstance(u, int) for u in units):
        raise DataError(f"{path}:{lineno}: units must be a non-empty list of integers")
    if world is not None:
        vocab = world.vocab_size(modality)
        if any(u < 0 or u >= vocab for u in units):
            raise DataError(f"{path}:{lineno}: unit id out of vocabulary (size {vocab})")
        label = rec.get("label")
        if label is not None and not 0 <= label < world.num_classes:
            raise DataError(
                f"{path}:{lineno}: label {label} out of range for {world.num_classes} classes"
            )
    return rec


def read_labeled(
    path: str | Path, world: ConceptWorld | None = None, expect_modality: int | None = None
) -> list[tuple[ModalityInstance, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_record(line, lineno, path, world)
            if "label" not in rec:
                raise DataError(f"{path}:{lineno}: labeled record missing 'label'")
            if expect_modality is not None and rec["modality"] != expect_modality:
                raise DataError(f"{path}:{lineno}: expected modality {expect_modality}")
            out.append(
                (ModalityInstance(modality=rec["modality"], units=tuple(rec["units"])), rec["label"])
            )
    return out


def read_pairs(
    path: str | Path, world: ConceptWorld | None = None
) -> list[tuple[ModalityInstance, ModalityInstance]]:
    halves: dict[int, dict[int, ModalityInstance]] = {}
    order: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_record(line, lineno, path, world)
            pid = rec.get("pair_id")
            if pid is None:
                raise DataError(f"{path}:{lineno}: paired record missing 'pair_id'")
            if "label" in rec:
                raise DataError(f"{path}:{lineno}: paired records must not carry labels")
            slot = halves.setdefault(pid, {})
            if rec["modality"] in slot:
                raise DataError(f"{path}:{lineno}: duplicate modality {rec['modality']} for pair {pid}")
            if not slot:
                order.append(pid)
            slot[rec["modality"]] = ModalityInstance(modality=rec["modality"], units=tuple(rec["units"]))
    pairs = []
    for pid in order:
        slot = halves[pid]
        if set(slot) != {1, 2}:
            raise DataError(f"{path}: pair {pid} is missing one modality")
        pairs.append((slot[1], slot[2]))
    return pairs


TRIPLE_FILES = {"d1": "d1.jsonl", "d2": "d2.jsonl", "d3": "d3.jsonl"}
TEST_FILES = {"test1": "test1.jsonl", "test2": "test2.jsonl", "d3_test": "d3_test.jsonl"}


def write_triple(directory: str | Path, triple: DatasetTriple) -> None:
    directory = Path(directory)
    write_labeled(directory / TRIPLE_FILES["d1"], triple.d1)
    write_labeled(directory / TRIPLE_FILES["d2"], triple.d2)
    write_pairs(directory / TRIPLE_FILES["d3"], triple.d3)


def read_triple(directory: str | Path, world: ConceptWorld | None = None) -> DatasetTriple:
    directory = Path(directory)
    return DatasetTriple(
        d1=read_labeled(directory / TRIPLE_FILES["d1"], world, expect_modality=1),
        d2=read_labeled(directory / TRIPLE_FILES["d2"], world, expect_modality=2),
        d3=read_pairs(directory / TRIPLE_FILES["d3"], world),
    )
