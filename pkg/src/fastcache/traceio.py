"""Bit-exact binary container for traces, model weights, and approximators.

Layout: 8-byte magic ``FCTRACE1``, a little-endian uint32 length prefix, a
UTF-8 JSON header line (sorted keys, compact separators, trailing newline,
exactly as long as the prefix says), then raw little-endian IEEE-754 binary32
payloads in declared order.

Trace payload order, per timestep frame: the model input x_t, then (when the
header says has_layer_pairs) the layer-l input and layer-l output for
l = 0..L-1. Generic containers (model weights, fitted approximators) instead
declare a "shapes" list in the header and concatenate the arrays in order.

Malformed magic/JSON/fields raise TraceFormatError; payload bytes that
disagree with the declared sizes raise TraceCorruptionError. Both subclass
ValueError.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FCTRACE1"
_LEN_FMT = "<I"
_LEN_SIZE = 4
_ITEM = 4  # binary32

__all__ = [
    "MAGIC",
    "TraceFormatError",
    "TraceCorruptionError",
    "TraceFrame",
    "Trace",
    "write_trace",
    "read_trace",
    "write_container",
    "read_container",
    "encode_header",
]


class TraceFormatError(ValueError):
    """Container is not a well-formed trace file (magic, header, fields)."""


class TraceCorruptionError(ValueError):
    """Declared sizes disagree with the byte stream."""


def encode_header(header: dict) -> bytes:
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


@dataclass
class TraceFrame:
    input: np.ndarray
    layer_inputs: list | None = None
    layer_outputs: list | None = None


@dataclass
class Trace:
    """In-memory trace: header metadata plus per-timestep frames."""

    header: dict
    frames: list = field(default_factory=list)

    def __post_init__(self):
        h = self.header
        for key in ("n_tokens", "dim", "layers", "timesteps"):
            if key not in h:
                raise TraceFormatError(f"trace header missing field {key!r}")
        if h["timesteps"] != len(self.frames):
            raise TraceFormatError(
                f"header declares {h['timesteps']} timesteps, got {len(self.frames)} frames"
            )
        n, d, layers = h["n_tokens"], h["dim"], h["layers"]
        pairs = bool(h.get("has_layer_pairs", False))
        for t, fr in enumerate(self.frames):
            if fr.input.shape != (n, d):
                raise TraceFormatError(f"frame {t} input shape {fr.input.shape} != ({n}, {d})")
            if pairs:
                if fr.layer_inputs is None or fr.layer_outputs is None:
                    raise TraceFormatError(f"frame {t} missing layer pairs")
                if len(fr.layer_inputs) != layers or len(fr.layer_outputs) != layers:
                    raise TraceFormatError(f"frame {t} has wrong layer-pair count")

    @property
    def inputs(self) -> list:
        return [fr.input for fr in self.frames]

    @property
    def has_layer_pairs(self) -> bool:
        return bool(self.header.get("has_layer_pairs", False))


def _frame_arrays(trace: Trace):
    for fr in trace.frames:
        yield fr.input
        if trace.has_layer_pairs:
            for a, b in zip(fr.layer_inputs, fr.layer_outputs):
                yield a
                yield b


def _write_blob(dest, blob: bytes) -> int:
    if hasattr(dest, "write"):
        dest.write(blob)
    else:
        with open(dest, "wb") as fh:
            fh.write(blob)
    return len(blob)


def _read_blob(source) -> bytes:
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def write_trace(trace: Trace, destination) -> int:
    """Serialize and return total byte count written."""
    header = dict(trace.header)
    header.setdefault("kind", "trace")
    header.setdefault("dtype", "float32")
    hbytes = encode_header(header)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack(_LEN_FMT, len(hbytes)))
    buf.write(hbytes)
    for arr in _frame_arrays(trace):
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return _write_blob(destination, buf.getvalue())


def _split_container(blob: bytes) -> tuple[dict, bytes]:
    if len(blob) < len(MAGIC) + _LEN_SIZE:
        raise TraceFormatError("file too short for magic and header prefix")
    if blob[: len(MAGIC)] != MAGIC:
        raise TraceFormatError(f"bad magic {blob[:len(MAGIC)]!r}")
    (hlen,) = struct.unpack_from(_LEN_FMT, blob, len(MAGIC))
    start = len(MAGIC) + _LEN_SIZE
    if start + hlen > len(blob):
        raise TraceCorruptionError(
            f"header truncated: declares {hlen} bytes, file ends at offset {len(blob)}"
        )
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise TraceFormatError("header JSON must be an object")
    return header, blob[start + hlen :]


def _require_counts(header: dict, keys) -> list:
    vals = []
    for key in keys:
        v = header.get(key)
        if not isinstance(v, int) or v < 0:
            raise TraceFormatError(f"header field {key!r} must be a non-negative integer, got {v!r}")
        vals.append(v)
    return vals


def read_trace(source) -> Trace:
    """Parse a trace container, validating sizes exactly."""
    header, payload = _split_container(_read_blob(source))
    if header.get("kind", "trace") != "trace":
        raise TraceFormatError(f"expected a trace container, got kind {header.get('kind')!r}")
    n, d, layers, steps = _require_counts(header, ("n_tokens", "dim", "layers", "timesteps"))
    pairs = bool(header.get("has_layer_pairs", False))
    mat = n * d * _ITEM
    frame_bytes = mat * (1 + (2 * layers if pairs else 0))
    expected = steps * frame_bytes
    if len(payload) < expected:
        offset = len(MAGIC) + _LEN_SIZE + len(encode_header(header))
        raise TraceCorruptionError(
            f"payload truncated: expected {expected} bytes, got {len(payload)} "
            f"(stream ends near byte offset {offset + len(payload)})"
        )
    if len(payload) > expected:
        raise TraceCorruptionError(
            f"{len(payload) - expected} trailing bytes beyond declared payload"
        )

    frames = []
    pos = 0

    def take() -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(payload, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
        pos += mat
        return arr.copy()

    for _ in range(steps):
        x = take()
        if pairs:
            ins, outs = [], []
            for _ in range(layers):
                ins.append(take())
                outs.append(take())
            frames.append(TraceFrame(x, ins, outs))
        else:
            frames.append(TraceFrame(x))
    return Trace(header, frames)


def write_container(destination, header: dict, arrays) -> int:
    """Generic container: header gains a "shapes" list, payload concatenates arrays."""
    arrays = [np.asarray(a) for a in arrays]
    header = dict(header)
    header["shapes"] = [list(a.shape) for a in arrays]
    header.setdefault("dtype", "float32")
    hbytes = encode_header(header)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack(_LEN_FMT, len(hbytes)))
    buf.write(hbytes)
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return _write_blob(destination, buf.getvalue())


def read_container(source) -> tuple[dict, list]:
    header, payload = _split_container(_read_blob(source))
    shapes = header.get("shapes")
    if not isinstance(shapes, list):
        raise TraceFormatError("container header missing 'shapes' list")
    counts = []
    for s in shapes:
        if not isinstance(s, list) or any((not isinstance(v, int)) or v < 0 for v in s):
            raise TraceFormatError(f"bad shape entry {s!r}")
        counts.append(int(np.prod(s, dtype=np.int64)) if s else 1)
    expected = sum(counts) * _ITEM
    if len(payload) != expected:
        raise TraceCorruptionError(
            f"payload size {len(payload)} != declared {expected} bytes"
        )
    arrays, pos = [], 0
    for s, cnt in zip(shapes, counts):
        arr = np.frombuffer(payload, dtype="<f4", count=cnt, offset=pos).reshape(s)
        arrays.append(arr.copy())
        pos += cnt * _ITEM
    return header, arrays
