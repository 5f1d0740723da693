"""Binary checkpoint container shared by both networks.

Layout (little-endian)::

    b"SSPC" | u16 version | u32 header_len | JSON header
    | f32 tensors in header order | u32 CRC32 of the tensor bytes

Signer checkpoints carry ``"confidential": true``; the public verification
path refuses to open them.
"""

import json
import struct
import zlib

import numpy as np

from . import dsp

MAGIC = b"SSPC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfidentialCheckpointError(CheckpointError):
    pass


def dumps(params, architecture, confidential, stft=dsp.DEFAULT_STFT, cutoff_hz=dsp.DEFAULT_CUTOFF_HZ,
          extra=None):
    header = {
        "architecture": architecture,
        "layers": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "dtype": "f32le",
        "stft": {"n_fft": stft.n_fft, "hop": stft.hop, "window": stft.window},
        "cutoff_hz": float(cutoff_hz),
        "confidential": bool(confidential),
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values())
    return (MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + payload
            + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def loads(data, allow_confidential=True):
    """Returns ``(header, params)``."""
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    if len(data) < 10:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[10:10 + hlen])
    except ValueError as e:
        raise CheckpointError(f"unreadable header: {e}") from None
    if header.get("confidential") and not allow_confidential:
        raise ConfidentialCheckpointError(
            "this is a confidential signer checkpoint; only verifier checkpoints may be used here")
    if header.get("dtype") != "f32le":
        raise CheckpointError(f"unsupported dtype {header.get('dtype')!r}")
    payload = data[10 + hlen:-4]
    if len(data) < 10 + hlen + 4:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch: checkpoint payload is corrupted")
    params, pos = {}, 0
    for layer in header["layers"]:
        n = int(np.prod(layer["shape"])) * 4
        if pos + n > len(payload):
            raise CheckpointError(f"payload too short for layer {layer['name']}")
        params[layer["name"]] = np.frombuffer(payload[pos:pos + n], dtype="<f4").reshape(layer["shape"]).copy()
        pos += n
    if pos != len(payload):
        raise CheckpointError(f"{len(payload) - pos} unexpected trailing payload bytes")
    return header, params


def stft_params(header):
    s = header["stft"]
    return dsp.StftParams(s["n_fft"], s["hop"], s["window"])


def save_signer(path, net, **kw):
    from .signet import ARCHITECTURE
    with open(path, "wb") as fh:
        fh.write(dumps(net.named_params(), ARCHITECTURE, confidential=True, **kw))


def save_verifier(path, net, **kw):
    from .vernet import ARCHITECTURE
    with open(path, "wb") as fh:
        fh.write(dumps(net.named_params(), ARCHITECTURE, confidential=False, **kw))


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def load_signer(path):
    from .signet import ARCHITECTURE, SignatureNet
    header, params = loads(_read(path))
    if header["architecture"] != ARCHITECTURE:
        raise CheckpointError(f"expected a {ARCHITECTURE} checkpoint, got {header['architecture']}")
    net = SignatureNet()
    net.load_params(params)
    return net, header


def load_verifier(path):
    """Public path: refuses confidential checkpoints."""
    from .vernet import ARCHITECTURE, VerifierNet
    header, params = loads(_read(path), allow_confidential=False)
    if header["architecture"] != ARCHITECTURE:
        raise CheckpointError(f"expected a {ARCHITECTURE} checkpoint, got {header['architecture']}")
    net = VerifierNet()
    net.load_params(params)
    return net, header
