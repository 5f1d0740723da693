"""STFT / ISTFT, HF band split and the band-energy profile.

Pipeline stages (signing, attacks, verification, training) frame audio with
:func:`analyze` / :func:`synthesize`, which pad half a window of silence at
both ends so that every real sample sits where the Hann overlap-add envelope
is well away from zero.
"""

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _core
from .audio_io import AudioClip

DEFAULT_CUTOFF_HZ = 4000.0
PATCH_BINS = 128
PATCH_FRAMES = 256
PATCH_HOP = PATCH_FRAMES // 2
DB_FLOOR = -120.0


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.hop * 2 != self.n_fft:
            raise ValueError(f"hop must be n_fft/2 for Hann COLA, got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"only the Hann window is supported, got {self.window!r}")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    def window_array(self):
        # periodic Hann: shifted copies at hop n_fft/2 sum to exactly 1
        n = np.arange(self.n_fft)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.n_fft)


DEFAULT_STFT = StftParams()


@dataclass(frozen=True, eq=False)
class Spectrogram:
    coeffs: np.ndarray  # complex, [bin, frame]
    params: StftParams
    sample_rate: int

    def __post_init__(self):
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.params.n_bins:
            raise ValueError(
                f"spectrogram needs {self.params.n_bins} bins for n_fft={self.params.n_fft}, "
                f"got shape {self.coeffs.shape}")

    @property
    def bin_hz(self):
        return self.sample_rate / self.params.n_fft

    @property
    def n_frames(self):
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class BandProfile:
    band_width_hz: float
    energies: np.ndarray  # dB per band

    @property
    def edges(self):
        n = len(self.energies)
        return [(i * self.band_width_hz, (i + 1) * self.band_width_hz) for i in range(n)]


def n_frames_for(length, params: StftParams):
    return 1 + math.ceil((length - params.n_fft) / params.hop)


def stft(clip: AudioClip, params: StftParams = DEFAULT_STFT) -> Spectrogram:
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < params.n_fft:
        raise ValueError(f"clip of {len(x)} samples is shorter than one window ({params.n_fft})")
    n_frames = n_frames_for(len(x), params)
    total = (n_frames - 1) * params.hop + params.n_fft
    x = np.pad(x, (0, total - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft)[::params.hop]
    coeffs = np.fft.rfft(frames * params.window_array(), axis=1).T
    return Spectrogram(np.ascontiguousarray(coeffs), params, clip.sample_rate)


def istft(spec: Spectrogram, length=None) -> AudioClip:
    """Weighted overlap-add with a Hann synthesis window, normalised by the
    summed squared window.  Output is clamped to [-1, 1]."""
    p = spec.params
    if spec.coeffs.shape[0] != p.n_bins:
        raise ValueError(f"bin count {spec.coeffs.shape[0]} inconsistent with n_fft={p.n_fft}")
    w = p.window_array()
    n_frames = spec.n_frames
    total = (n_frames - 1) * p.hop + p.n_fft
    frames = np.fft.irfft(spec.coeffs.T, n=p.n_fft, axis=1) * w
    y = _core.overlap_add(frames, p.hop, total)
    env = _core.overlap_add(np.broadcast_to(w * w, frames.shape), p.hop, total)
    nz = env > 1e-10
    y[nz] /= env[nz]
    if length is not None:
        y = np.pad(y, (0, max(0, length - len(y))))[:length]
    return AudioClip.from_float(y, spec.sample_rate)


def analyze(clip: AudioClip, params: StftParams = DEFAULT_STFT) -> Spectrogram:
    half = params.n_fft // 2
    return stft(AudioClip(np.pad(clip.samples, (half, half)), clip.sample_rate), params)


def synthesize(spec: Spectrogram, length) -> AudioClip:
    half = spec.params.n_fft // 2
    full = istft(spec, length + 2 * half)
    return AudioClip(full.samples[half:half + length], spec.sample_rate)


def cutoff_bin(spec_or_rate, cutoff_hz, n_fft=None):
    if isinstance(spec_or_rate, Spectrogram):
        rate, n_fft = spec_or_rate.sample_rate, spec_or_rate.params.n_fft
    else:
        rate = spec_or_rate
    return math.ceil(cutoff_hz * n_fft / rate - 1e-9)


class BandSplit(NamedTuple):
    lf: np.ndarray  # complex bins below the cutoff
    hf_magnitude: np.ndarray
    hf_phase: np.ndarray


def split_bands(spec: Spectrogram, cutoff_hz=DEFAULT_CUTOFF_HZ) -> BandSplit:
    nyquist = spec.sample_rate / 2
    if not 0 < cutoff_hz < nyquist:
        raise ValueError(f"cutoff must lie in (0, {nyquist}) Hz, got {cutoff_hz}")
    k = cutoff_bin(spec, cutoff_hz)
    hf = spec.coeffs[k:]
    return BandSplit(spec.coeffs[:k].copy(), np.abs(hf), np.angle(hf))


def recombine(lf, hf_magnitude, hf_phase, params: StftParams = DEFAULT_STFT,
              sample_rate=16000) -> Spectrogram:
    lf = np.asarray(lf)
    hf_magnitude = np.asarray(hf_magnitude)
    hf_phase = np.asarray(hf_phase)
    if hf_magnitude.shape != hf_phase.shape:
        raise ValueError(f"magnitude {hf_magnitude.shape} and phase {hf_phase.shape} differ")
    if lf.ndim != 2 or lf.shape[1] != hf_magnitude.shape[1]:
        raise ValueError(f"LF {lf.shape} and HF {hf_magnitude.shape} frame counts differ")
    if lf.shape[0] + hf_magnitude.shape[0] != params.n_bins:
        raise ValueError(
            f"{lf.shape[0]} + {hf_magnitude.shape[0]} bins do not make {params.n_bins}")
    hf = hf_magnitude * np.exp(1j * hf_phase)
    return Spectrogram(np.concatenate([lf, hf]), params, sample_rate)


def band_energy_profile(spec: Spectrogram, band_width_hz=600.0) -> BandProfile:
    """Mean |X|^2 over frames and member bins of each band, in dB.

    Bins are assigned by centre frequency; only whole bands below Nyquist are
    reported.  Linear power is averaged before the dB conversion.
    """
    if band_width_hz <= 0:
        raise ValueError("band_width_hz must be positive")
    n_bands = int((spec.sample_rate / 2) // band_width_hz)
    freqs = np.arange(spec.coeffs.shape[0]) * spec.bin_hz
    power = np.abs(spec.coeffs) ** 2
    energies = np.full(n_bands, DB_FLOOR)
    for b in range(n_bands):
        members = (freqs >= b * band_width_hz) & (freqs < (b + 1) * band_width_hz)
        if members.any():
            energies[b] = to_db(power[members].mean())
    return BandProfile(float(band_width_hz), energies)


def to_db(power):
    with np.errstate(divide="ignore"):
        return np.maximum(10 * np.log10(power), DB_FLOOR)


def write_band_csv(path, rows):
    """rows: iterables of (band_start_hz, band_end_hz, mean_energy_db, cohort_label)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band_start_hz", "band_end_hz", "mean_energy_db", "cohort_label"])
        for start, end, db, label in rows:
            w.writerow([f"{start:g}", f"{end:g}", f"{db:.4f}", label])


def profile_rows(profile: BandProfile, label):
    return [(a, b, float(e), label) for (a, b), e in zip(profile.edges, profile.energies)]


def extract_patches(band):
    """Cut a (128, T) magnitude band into 50%-overlapping (128, 256) patches.

    Short bands and the last patch are zero-padded.  Returns
    ``(patches, starts)``.
    """
    n_bins, t = band.shape
    if t <= PATCH_FRAMES:
        starts = [0]
    else:
        starts = [i * PATCH_HOP for i in range(1 + math.ceil((t - PATCH_FRAMES) / PATCH_HOP))]
    patches = np.zeros((len(starts), n_bins, PATCH_FRAMES), dtype=np.float32)
    for i, s in enumerate(starts):
        seg = band[:, s:s + PATCH_FRAMES]
        patches[i, :, :seg.shape[1]] = seg
    return patches, starts


def blend_patches(patches, starts, n_frames):
    """Inverse of :func:`extract_patches` with linear crossfades in the overlaps."""
    n_bins = patches.shape[1]
    ramp = (np.arange(PATCH_HOP) + 0.5) / PATCH_HOP
    acc = np.zeros((n_bins, starts[-1] + PATCH_FRAMES))
    wsum = np.zeros(starts[-1] + PATCH_FRAMES)
    for i, s in enumerate(starts):
        w = np.ones(PATCH_FRAMES)
        if i > 0:
            w[:PATCH_HOP] = ramp
        if i < len(starts) - 1:
            w[PATCH_FRAMES - PATCH_HOP:] = ramp[::-1]
        acc[:, s:s + PATCH_FRAMES] += patches[i] * w
        wsum[s:s + PATCH_FRAMES] += w
    return (acc / wsum)[:, :n_frames]


def model_band(spec: Spectrogram, cutoff_hz=DEFAULT_CUTOFF_HZ):
    """The PATCH_BINS magnitude rows above the cutoff (Nyquist bin excluded)."""
    k = cutoff_bin(spec, cutoff_hz)
    return np.abs(spec.coeffs[k:k + PATCH_BINS])


def clip_patches(clip: AudioClip, params: StftParams = DEFAULT_STFT, cutoff_hz=DEFAULT_CUTOFF_HZ):
    return extract_patches(model_band(analyze(clip, params), cutoff_hz))[0]
