"""Mono 16-bit PCM WAV reading/writing, and linear-interpolation resampling."""

import struct
from dataclasses import dataclass

import numpy as np

CANONICAL_RATE = 16000


class WavError(ValueError):
    """Base class for WAV parse failures."""


class WavHeaderError(WavError):
    pass


class WavFormatError(WavError):
    """Well-formed file in a format this reader does not accept."""

    def __init__(self, field, value, expected):
        super().__init__(f"unsupported {field}: {value} (expected {expected})")
        self.field = field
        self.value = value


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 1:
            raise ValueError(f"AudioClip is mono; got samples of shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("AudioClip samples must be finite")
        if s.size and np.max(np.abs(s)) > 1.0:
            raise ValueError("AudioClip samples must lie in [-1, 1]")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def from_float(cls, samples, sample_rate):
        """Build a clip from arbitrary floats, clamping to [-1, 1]."""
        return cls(np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0), sample_rate)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def padded_to(self, n):
        if len(self.samples) >= n:
            return self
        return AudioClip(np.pad(self.samples, (0, n - len(self.samples))), self.sample_rate)

    def trim_trailing_silence(self):
        nz = np.flatnonzero(self.samples)
        end = nz[-1] + 1 if nz.size else 0
        if end == len(self.samples):
            return self
        return AudioClip(self.samples[:end], self.sample_rate)


def _chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavHeaderError(f"chunk {cid!r} declares {size} bytes but only {len(body)} remain")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(data: bytes) -> AudioClip:
    if len(data) < 12:
        raise WavHeaderError("file too short for a RIFF header")
    if data[:4] != b"RIFF":
        raise WavHeaderError(f"bad RIFF magic {data[:4]!r}")
    if data[8:12] != b"WAVE":
        raise WavHeaderError(f"bad WAVE form type {data[8:12]!r}")
    fmt = pcm = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            pcm = body
    if fmt is None:
        raise WavHeaderError("missing fmt chunk")
    if len(fmt) < 16:
        raise WavHeaderError(f"fmt chunk too short ({len(fmt)} bytes)")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag != 1:
        raise WavFormatError("format tag", tag, "1 (PCM)")
    if channels != 1:
        raise WavFormatError("channel count", channels, "1")
    if bits != 16:
        raise WavFormatError("bit depth", bits, "16")
    if rate == 0:
        raise WavHeaderError("sample rate is 0")
    if block_align != 2:
        raise WavHeaderError(f"block align {block_align} inconsistent with 16-bit mono")
    if pcm is None:
        raise WavHeaderError("missing data chunk")
    raw = np.frombuffer(pcm[:len(pcm) - len(pcm) % 2], dtype="<i2")
    return AudioClip(raw.astype(np.float32) / 32768.0, rate)


def write_wav(clip: AudioClip) -> bytes:
    if len(clip.samples) == 0:
        raise ValueError("cannot write an empty clip")
    # same scale as the reader so read(write(x)) stays within half a step; +1.0 clamps to 32767
    q = np.clip(np.round(clip.samples.astype(np.float64) * 32768), -32768, 32767).astype("<i2")
    pcm = q.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def load(path, target_rate=CANONICAL_RATE) -> AudioClip:
    with open(path, "rb") as fh:
        clip = read_wav(fh.read())
    return resample(clip, target_rate) if target_rate else clip


def save(path, clip: AudioClip):
    with open(path, "wb") as fh:
        fh.write(write_wav(clip))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear interpolation onto the new sample grid.

    No anti-alias filter: downsampling by more than 2x aliases.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip.samples)
    n_out = max(1, int(round(n_in * target_rate / clip.sample_rate)))
    t_out = np.arange(n_out) * (clip.sample_rate / target_rate)
    y = np.interp(t_out, np.arange(n_in), clip.samples.astype(np.float64))
    return AudioClip(y, target_rate)
