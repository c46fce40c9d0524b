"""Binary checkpoint format for expert and blended parameter vectors.

Layout: 8 magic bytes, a little-endian u32 header length, a UTF-8 JSON
header, then `param_count` little-endian f32 values. Storage is single
precision regardless of the in-memory dtype; the f32 payload round-trips
bit-exactly on any host.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CorruptionError, FormatError, NumericError, VersionError
from .nets import ArchSpec, check_params

MAGIC = b"GLUEPK1\x00"
FORMAT_VERSION = 1
_MAX_HEADER = 1 << 20


def save_checkpoint(path, arch: ArchSpec, params, metadata: dict | None = None) -> None:
    values = check_params(arch, params).astype("<f4")
    header = {
        "format_version": FORMAT_VERSION,
        "arch": arch.to_dict(),
        "param_count": arch.param_count,
        "dtype": "f32",
        "metadata": dict(metadata or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(values.tobytes())


def load_checkpoint(path) -> tuple[ArchSpec, np.ndarray, dict]:
    """Read a checkpoint; returns (arch, float64 params, metadata).

    Raises FormatError for bad magic or inconsistent headers,
    VersionError for unknown versions, and CorruptionError when the
    payload length disagrees with the header.
    """
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise CorruptionError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        if header_len == 0 or header_len > _MAX_HEADER:
            raise FormatError(f"{path}: implausible header length {header_len}")
        blob = f.read(header_len)
        if len(blob) != header_len:
            raise CorruptionError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionError(f"{path}: unsupported format version {version!r}")
        if header.get("dtype") != "f32":
            raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        if "arch" not in header or "param_count" not in header:
            raise FormatError(f"{path}: header missing arch or param_count")
        arch = ArchSpec.from_dict(header["arch"])
        param_count = int(header["param_count"])
        if param_count != arch.param_count:
            raise FormatError(
                f"{path}: header says {param_count} parameters, arch implies {arch.param_count}"
            )
        payload = f.read()
    if len(payload) != 4 * param_count:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * param_count}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{path}: payload contains non-finite values")
    return arch, values, header.get("metadata", {})
