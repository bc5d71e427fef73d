import json

import numpy as np
import pytest

from comodal.errors import CheckpointError, DataError
from comodal.model import init_model
from comodal.rng import rng_fork
from comodal.storage import (
    load_checkpoint,
    load_world,
    read_labeled,
    read_pairs,
    read_triple,
    save_checkpoint,
    save_world,
    write_labeled,
    write_pairs,
    write_triple,
)
from comodal.world import ModalityInstance, sample_datasets


@pytest.fixture
def model(tiny_world):
    return init_model(tiny_world.vocab_sizes, (6, 8, 6), tiny_world.num_classes, rng_fork(0, "i"))


class TestCheckpoint:
    def test_round_trip_bit_identical(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, config_doc={"a": 1}, config_fingerprint="fp", seed=3)
        loaded, header = load_checkpoint(path)
        for (name_a, a), (name_b, b) in zip(model.tensors(), loaded.tensors()):
            assert name_a == name_b
            assert a.tobytes() == b.tobytes()
        assert header["config_fingerprint"] == "fp"
        assert header["seed"] == 3
        assert header["config"] == {"a": 1}

    def test_save_is_deterministic(self, model, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1, config_fingerprint="fp", seed=0)
        save_checkpoint(model, p2, config_fingerprint="fp", seed=0)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[:6] = b"XXXXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(CheckpointError, match="truncated payload"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(CheckpointError, match="disagreement"):
            load_checkpoint(path)

    def test_version_mismatch(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        header_len = int.from_bytes(raw[6:10], "little")
        header = json.loads(raw[10 : 10 + header_len])
        header["format_version"] = 99
        new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        path.write_bytes(
            raw[:6] + len(new_header).to_bytes(4, "little") + new_header + raw[10 + header_len :]
        )
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file_is_not_checkpoint_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestWorldFile:
    def test_round_trip(self, tiny_world, tmp_path):
        path = tmp_path / "world.json"
        save_world(tiny_world, path)
        again = load_world(path)
        assert json.dumps(again.to_json_dict(), sort_keys=True) == json.dumps(
            tiny_world.to_json_dict(), sort_keys=True
        )

    def test_unsupported_version(self, tiny_world, tmp_path):
        path = tmp_path / "world.json"
        doc = tiny_world.to_json_dict()
        doc["format_version"] = 9
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="format_version"):
            load_world(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "world.json"
        path.write_text("{")
        with pytest.raises(DataError):
            load_world(path)


class TestDatasetFiles:
    @pytest.fixture
    def triple(self, tiny_world):
        return sample_datasets(tiny_world, (20, 15, 10), rng_fork(1, "d"))

    def test_round_trip(self, tiny_world, triple, tmp_path):
        write_triple(tmp_path, triple)
        again = read_triple(tmp_path, tiny_world)
        assert [(x.modality, x.units, y) for x, y in again.d1] == [
            (x.modality, x.units, y) for x, y in triple.d1
        ]
        assert [(a.units, b.units) for a, b in again.d3] == [
            (a.units, b.units) for a, b in triple.d3
        ]
        # latent concepts are oracle-side only and never serialized
        assert all(x.latent_concepts is None for x, _ in again.d1)

    def test_write_is_deterministic(self, triple, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        write_triple(d1, triple)
        write_triple(d2, triple)
        for name in ("d1.jsonl", "d2.jsonl", "d3.jsonl"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_label_out_of_range_names_line(self, tiny_world, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"modality": 1, "units": [0, 1], "label": 0}\n'
            f'{{"modality": 1, "units": [0, 1], "label": {tiny_world.num_classes}}}\n'
        )
        with pytest.raises(DataError, match=":2:"):
            read_labeled(path, tiny_world)

    def test_unit_out_of_vocab_names_line(self, tiny_world, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"modality": 1, "units": [999], "label": 0}\n')
        with pytest.raises(DataError, match=":1:"):
            read_labeled(path, tiny_world)

    def test_empty_file_is_empty_dataset(self, tiny_world, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert read_labeled(path, tiny_world) == []
        assert read_pairs(path, tiny_world) == []

    def test_malformed_json_names_line(self, tiny_world, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"modality": 1, "units": [0], "label": 0}\n{oops\n')
        with pytest.raises(DataError, match=":2:"):
            read_labeled(path, tiny_world)

    def test_unknown_field_rejected(self, tiny_world, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"modality": 1, "units": [0], "label": 0, "latents": [1]}\n')
        with pytest.raises(DataError, match="unknown field"):
            read_labeled(path, tiny_world)

    def test_missing_label_rejected_for_labeled(self, tiny_world, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"modality": 1, "units": [0]}\n')
        with pytest.raises(DataError, match="missing 'label'"):
            read_labeled(path, tiny_world)

    def test_pair_file_validation(self, tiny_world, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"modality": 1, "units": [0], "pair_id": 0}\n')
        with pytest.raises(DataError, match="missing one modality"):
            read_pairs(path, tiny_world)
        path.write_text(
            '{"modality": 1, "units": [0], "pair_id": 0}\n'
            '{"modality": 1, "units": [1], "pair_id": 0}\n'
        )
        with pytest.raises(DataError, match="duplicate modality"):
            read_pairs(path, tiny_world)
        path.write_text('{"modality": 2, "units": [0], "pair_id": 0, "label": 1}\n')
        with pytest.raises(DataError, match="must not carry labels"):
            read_pairs(path, tiny_world)

    def test_wrong_modality_in_labeled_file(self, tiny_world, triple, tmp_path):
        path = tmp_path / "d.jsonl"
        write_labeled(path, triple.d2)
        with pytest.raises(DataError, match="expected modality 1"):
            read_labeled(path, tiny_world, expect_modality=1)
