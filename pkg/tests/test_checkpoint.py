import json
import struct

import numpy as np
import pytest

from gluemix import (
    ArchSpec,
    CorruptionError,
    FormatError,
    NumericError,
    VersionError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from gluemix.checkpoint import MAGIC


@pytest.fixture
def arch():
    return ArchSpec([5, 7, 3], activation="tanh")


def write_and_read(tmp_path, arch, params, metadata=None):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, arch, params, metadata)
    return path, load_checkpoint(path)


class TestRoundtrip:
    def test_values_bit_exact_in_f32(self, tmp_path, arch):
        rng = np.random.default_rng(0)
        params = init_params(arch, rng)
        _, (arch2, loaded, meta) = write_and_read(tmp_path, arch, params)
        assert arch2 == arch
        assert np.array_equal(loaded.astype(np.float32), params.astype(np.float32))
        assert loaded.dtype == np.float64

    def test_metadata_roundtrip(self, tmp_path, arch):
        meta = {"expert_id": 3, "train_size": 500, "proxy_accuracy": 0.75, "seed": 9}
        _, (_, _, loaded_meta) = write_and_read(tmp_path, arch, np.zeros(arch.param_count), meta)
        assert loaded_meta == meta

    def test_many_random_roundtrips(self, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(25):
            sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 4)))]
            arch = ArchSpec(sizes, activation="relu")
            params = rng.standard_normal(arch.param_count) * 10
            path = tmp_path / f"r{i}.ckpt"
            save_checkpoint(path, arch, params)
            a2, loaded, _ = load_checkpoint(path)
            assert a2 == arch
            assert np.array_equal(loaded.astype(np.float32), params.astype(np.float32))

    def test_header_fields(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        assert header["format_version"] == 1
        assert header["dtype"] == "f32"
        assert header["param_count"] == arch.param_count
        assert header["arch"]["layer_sizes"] == list(arch.layer_sizes)
        assert header["arch"]["activation"] == "tanh"
        assert "metadata" in header
        assert len(raw) == 12 + hlen + 4 * arch.param_count

    def test_payload_is_little_endian_f32(self, tmp_path, arch):
        params = np.zeros(arch.param_count)
        params[0] = 1.5
        path, _ = write_and_read(tmp_path, arch, params)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        first = struct.unpack("<f", raw[12 + hlen : 16 + hlen])[0]
        assert first == 1.5


class TestErrors:
    def test_bad_magic(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12 : 12 + hlen])
        header["format_version"] = 99
        blob = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + raw[12 + hlen :])
        with pytest.raises(VersionError):
            load_checkpoint(path)

    def test_param_count_mismatch(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12 : 12 + hlen])
        header["param_count"] = arch.param_count + 1
        blob = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + raw[12 + hlen :])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_header_not_json(self, tmp_path, arch):
        blob = b"{not-json"
        payload = b"\x00" * (4 * arch.param_count)
        path = tmp_path / "bad.ckpt"
        path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + payload)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_unsupported_dtype(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12 : 12 + hlen])
        header["dtype"] = "f64"
        blob = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + raw[12 + hlen :])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_nan_payload_rejected(self, tmp_path, arch):
        path, _ = write_and_read(tmp_path, arch, np.zeros(arch.param_count))
        raw = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<I", bytes(raw[8:12]))
        raw[12 + hlen : 16 + hlen] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(NumericError):
            load_checkpoint(path)

    def test_save_rejects_nonfinite(self, tmp_path, arch):
        params = np.zeros(arch.param_count)
        params[2] = np.inf
        with pytest.raises(NumericError):
            save_checkpoint(tmp_path / "x.ckpt", arch, params)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        path.write_bytes(b"")
        with pytest.raises(FormatError):
            load_checkpoint(path)
