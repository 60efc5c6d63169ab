"""Checkpoint sealing, bit-exact restore and tamper detection; tensor hashing."""

import zipfile

import numpy as np
import pytest

import core.hasher as hasher
from core.checkpoint import HEADER_KEY, load_checkpoint, save_checkpoint
from core.exceptions import IntegrityError
from core.hasher import fingerprint_file, fingerprint_tensors, generate_sha256, verify_integrity
from core.kernel import MarkerSet


def test_sha256_known_value():
    assert generate_sha256("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert generate_sha256(b"abc") == generate_sha256("abc")


def test_tensor_fingerprint_ignores_insertion_order():
    a = {"x": np.arange(4.0), "y": np.ones(2)}
    b = {"y": np.ones(2), "x": np.arange(4.0)}
    assert fingerprint_tensors(a) == fingerprint_tensors(b)
    assert verify_integrity(b, fingerprint_tensors(a))


def test_tensor_fingerprint_sees_shape():
    flat = {"x": np.arange(4.0)}
    square = {"x": np.arange(4.0).reshape(2, 2)}
    assert fingerprint_tensors(flat) != fingerprint_tensors(square)


def test_file_fingerprint(tmp_path):
    path = tmp_path / "f.txt"
    path.write_bytes(b"abc")
    assert fingerprint_file(path) == generate_sha256(b"abc")


def test_file_fingerprint_streams_in_chunks(tmp_path, monkeypatch):
    monkeypatch.setattr(hasher, "CHUNK_SIZE", 4)
    payload = bytes(range(256)) * 3
    path = tmp_path / "f.bin"
    path.write_bytes(payload)
    assert fingerprint_file(path) == generate_sha256(payload)


def test_sha256_of_chunks_matches_joined_bytes():
    assert generate_sha256([b"ab", b"", b"c"]) == generate_sha256(b"abc")


def test_round_trip_is_bit_exact(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    digest = save_checkpoint(path, tiny_params, tiny_markers, tiny_config, pretrained=tiny_params.copy(),
                             metadata={"dataset": "toy"})
    restored = load_checkpoint(path)
    for name, tensor in tiny_params.named_tensors().items():
        np.testing.assert_array_equal(restored.params.named_tensors()[name], tensor)
        np.testing.assert_array_equal(restored.pretrained.named_tensors()[name], tensor)
    np.testing.assert_array_equal(restored.markers.positive, tiny_markers.positive)
    np.testing.assert_array_equal(restored.markers.negative, tiny_markers.negative)
    assert restored.config == tiny_config
    assert restored.metadata == {"dataset": "toy"}
    assert len(digest) == 64


def test_checkpoint_without_pretrained_weights(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config)
    assert load_checkpoint(path).pretrained is None


def test_saving_twice_gives_identical_bytes(tmp_path, tiny_params, tiny_markers, tiny_config):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(a, tiny_params, tiny_markers, tiny_config)
    save_checkpoint(b, tiny_params, tiny_markers, tiny_config)
    assert a.read_bytes() == b.read_bytes()


def test_modified_tensor_is_refused(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config)
    with np.load(path) as archive:
        entries = {name: archive[name] for name in archive.files}
    entries["markers.pos"] = entries["markers.pos"] + 1e-9
    tampered = tmp_path / "tampered.npz"
    np.savez(tampered, **entries)
    with pytest.raises(IntegrityError, match="hash mismatch"):
        load_checkpoint(tampered)


def test_missing_header_is_refused(tmp_path, tiny_params):
    path = tmp_path / "plain.npz"
    np.savez(path, **tiny_params.named_tensors())
    with pytest.raises(IntegrityError, match="header"):
        load_checkpoint(path)


def test_truncated_file_is_refused(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_missing_checkpoint_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.npz")


def test_header_entry_is_stored(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config)
    with zipfile.ZipFile(path) as archive:
        assert HEADER_KEY + ".npy" in archive.namelist()


def test_initial_markers_round_trip(tmp_path, tiny_params, tiny_markers, tiny_config):
    path = tmp_path / "model.npz"
    start = MarkerSet(tiny_markers.positive + 1.0, tiny_markers.negative + 1.0)
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config, initial_markers=start)
    restored = load_checkpoint(path)
    np.testing.assert_array_equal(restored.initial_markers.positive, start.positive)
    np.testing.assert_array_equal(restored.initial_markers.negative, start.negative)
    np.testing.assert_array_equal(restored.markers.positive, tiny_markers.positive)
    save_checkpoint(path, tiny_params, tiny_markers, tiny_config)
    assert load_checkpoint(path).initial_markers is None
