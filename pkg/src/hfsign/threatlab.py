"""Stand-ins for the outside world: a parametric cloning attack that
attenuates high frequencies, and a synthetic speech-like corpus."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import audio_io, dsp
from .audio_io import CANONICAL_RATE, AudioClip

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class AttackParams:
    lp_cutoff_range_hz: tuple = (3000.0, 6000.0)
    hf_noise_floor_db: float = -50.0
    gain_jitter_db: float = 1.0
    # extra roll-off of the replacement noise above the cutoff
    noise_tilt_db_per_khz: float = -3.0

    def __post_init__(self):
        lo, hi = self.lp_cutoff_range_hz
        if not 0 < lo <= hi:
            raise ValueError(f"bad cutoff range {self.lp_cutoff_range_hz}")
        if self.hf_noise_floor_db >= 0:
            raise ValueError("hf_noise_floor_db must be below 0 dB")
        if self.gain_jitter_db < 0:
            raise ValueError("gain_jitter_db is a bound and must be >= 0")


@dataclass(frozen=True)
class AttackDraw:
    """The per-clip random choices of one clone_proxy call."""
    lp_cutoff_hz: float
    gain_db: float


def draw_attack(params: AttackParams, rng, sample_rate=CANONICAL_RATE):
    lo, hi = params.lp_cutoff_range_hz
    hi = min(hi, sample_rate / 2 * 0.99)
    return AttackDraw(float(rng.uniform(lo, hi)),
                      float(rng.uniform(-params.gain_jitter_db, params.gain_jitter_db)))


def clone_proxy(clip: AudioClip, params: AttackParams = AttackParams(), rng=None,
                draw: AttackDraw = None, stft_params=dsp.DEFAULT_STFT) -> AudioClip:
    """Emulate a voice clone of ``clip``: everything above a random low-pass
    cutoff is replaced with faint shaped noise, then a small random gain.

    Replacement noise is capped per bin a little below the magnitude it
    replaces, so the attacked band never gains energy.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if draw is None:
        draw = draw_attack(params, rng, clip.sample_rate)
    if not 0 < draw.lp_cutoff_hz < clip.sample_rate / 2:
        raise ValueError(f"cutoff {draw.lp_cutoff_hz} Hz outside (0, Nyquist)")
    spec = dsp.analyze(clip, stft_params)
    coeffs = spec.coeffs.copy()
    k = dsp.cutoff_bin(spec, draw.lp_cutoff_hz)
    n_hf, n_frames = coeffs[k:].shape
    rms = float(np.sqrt(np.mean(clip.samples.astype(np.float64) ** 2)))
    # per-bin magnitude of white noise at that RMS under the analysis window
    w = stft_params.window_array()
    level = rms * 10 ** (params.hf_noise_floor_db / 20) * np.sqrt(np.sum(w * w))
    freqs_khz = (np.arange(k, k + n_hf) * spec.bin_hz - draw.lp_cutoff_hz) / 1000
    shape = 10 ** (params.noise_tilt_db_per_khz * freqs_khz / 20)
    noise = (rng.standard_normal((n_hf, n_frames)) + 1j * rng.standard_normal((n_hf, n_frames))) / np.sqrt(2)
    noise *= (level * shape)[:, None]
    gain = 10 ** (draw.gain_db / 20)
    cap = np.abs(coeffs[k:]) * 10 ** (-(params.gain_jitter_db + 1.0) / 20)
    mag = np.abs(noise)
    over = mag > cap
    noise[over] *= cap[over] / mag[over]
    coeffs[k:] = noise
    coeffs *= gain
    out = dsp.synthesize(dsp.Spectrogram(coeffs, stft_params, clip.sample_rate), len(clip))
    return out


@dataclass(frozen=True)
class SpeakerProfile:
    f0: float
    formants: tuple  # ((centre_hz, bandwidth_hz), ...) x3
    hf_tilt_db_per_khz: float
    noise_db: float = -18.0
    seed: int = 0
    # sibilant noise between syllables: spectral centre and level re the voiced part
    fric_hz: float = 5000.0
    fric_db: float = -16.0

    def __post_init__(self):
        if not 85 <= self.f0 <= 255:
            raise ValueError(f"f0 {self.f0} outside [85, 255] Hz")
        if len(self.formants) != 3:
            raise ValueError("need exactly three formants")

    @classmethod
    def random(cls, rng, sample_rate=CANONICAL_RATE):
        f1 = rng.uniform(300, 850)
        f2 = rng.uniform(max(f1 + 300, 900), 2200)
        f3 = rng.uniform(2400, 3300)
        bws = rng.uniform(60, 160, size=3) * np.array([1.0, 1.3, 1.6])
        nyq = sample_rate / 2
        formants = tuple((float(min(f, nyq * 0.9)), float(b)) for f, b in zip((f1, f2, f3), bws))
        return cls(f0=float(rng.uniform(85, 255)), formants=formants,
                   hf_tilt_db_per_khz=float(rng.uniform(-4.0, -2.0)),
                   noise_db=float(rng.uniform(-22.0, -14.0)),
                   seed=int(rng.integers(2 ** 31)),
                   fric_hz=float(rng.uniform(3500.0, 6000.0)),
                   fric_db=float(rng.uniform(-20.0, -12.0)))

    def to_dict(self):
        return {"f0": self.f0, "formants": [list(f) for f in self.formants],
                "hf_tilt_db_per_khz": self.hf_tilt_db_per_khz, "noise_db": self.noise_db,
                "seed": self.seed, "fric_hz": self.fric_hz, "fric_db": self.fric_db}

    def envelope(self, freqs):
        """Linear amplitude of the vocal-tract envelope (formant peaks x tilt)."""
        freqs = np.asarray(freqs, dtype=np.float64)
        env = np.full(freqs.shape, 0.02)
        for gain, (fc, bw) in zip((1.0, 0.3, 0.12), self.formants):
            env += gain / (1 + ((freqs - fc) / (bw / 2)) ** 2)
        return env * 10 ** (self.hf_tilt_db_per_khz * freqs / 1000 / 20)


def synth_utterance(profile: SpeakerProfile, duration_s, rng, sample_rate=CANONICAL_RATE) -> AudioClip:
    """Voiced harmonic stack shaped by the formant envelope, plus tilted
    broadband noise, under a 4 Hz syllabic envelope; sibilant noise fills the
    gaps between syllables.  Peak normalised to 0.9."""
    n = int(round(duration_s * sample_rate))
    if n < dsp.DEFAULT_STFT.n_fft:
        raise ValueError(f"duration {duration_s}s is shorter than one analysis window")
    t = np.arange(n) / sample_rate
    vib = 1 + 0.04 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * np.pi))
    f0_t = profile.f0 * vib
    phase = 2 * np.pi * np.cumsum(f0_t) / sample_rate
    voiced = np.zeros(n)
    n_harm = int((sample_rate / 2) // (profile.f0 * 1.05))
    offsets = rng.uniform(0, 2 * np.pi, size=n_harm)
    for h in range(1, n_harm + 1):
        fh = h * f0_t
        amp = np.where(fh < sample_rate / 2, profile.envelope(fh), 0.0)
        voiced += amp * np.sin(h * phase + offsets[h - 1])
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sample_rate)
    shaped = profile.envelope(freqs) ** 0.5 * 10 ** (profile.hf_tilt_db_per_khz * freqs / 1000 / 20)
    noise = np.fft.irfft(spec * shaped, n)
    noise *= np.std(voiced) / max(np.std(noise), 1e-12) * 10 ** (profile.noise_db / 20)
    rate = rng.uniform(3.5, 4.5)
    cycle = 0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    syll = 0.15 + 0.85 * cycle ** 1.5
    # broad resonance around fric_hz on top of a 2 kHz high-pass
    fric_shape = (1 / np.sqrt(1 + ((freqs - profile.fric_hz) / 1500) ** 2)
                  * (freqs / 2000) ** 2 / (1 + (freqs / 2000) ** 2))
    fric = np.fft.irfft(np.fft.rfft(rng.standard_normal(n)) * fric_shape, n)
    fric *= np.std(voiced) / max(np.std(fric), 1e-12) * 10 ** (profile.fric_db / 20)
    x = (voiced + noise) * syll + fric * (1 - cycle) ** 2
    x *= 0.9 / np.max(np.abs(x))
    return AudioClip(x, sample_rate)


@dataclass
class Corpus:
    """In-memory view of a manifest: user id -> clips, in manifest order."""
    root: str
    users: dict = field(default_factory=dict)  # user_id -> list of relative paths
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def user_ids(self):
        return list(self.users)

    def clip(self, user_id, i):
        rel = self.users[user_id][i]
        if rel not in self._cache:
            self._cache[rel] = audio_io.load(os.path.join(self.root, rel))
        return self._cache[rel]

    def clips(self, user_id):
        return [self.clip(user_id, i) for i in range(len(self.users[user_id]))]

    def items(self):
        """(user_id, clip_index) pairs in manifest order."""
        return [(u, i) for u, paths in self.users.items() for i in range(len(paths))]

    def manifest(self):
        return {"version": 1, "users": [{"user_id": u, "clips": list(p)} for u, p in self.users.items()]}

    @classmethod
    def load(cls, root, manifest_path=None):
        manifest_path = manifest_path or os.path.join(root, MANIFEST_NAME)
        with open(manifest_path) as fh:
            doc = json.load(fh)
        return cls(root, read_manifest(doc))

    @classmethod
    def from_clips(cls, clips_by_user):
        """Corpus held purely in memory (keys of the cache act as paths)."""
        c = cls(root="")
        for u, clips in clips_by_user.items():
            c.users[u] = []
            for i, clip in enumerate(clips):
                rel = f"{u}/{i:04d}.wav"
                c.users[u].append(rel)
                c._cache[rel] = clip
        return c


def read_manifest(doc):
    if doc.get("version") != 1:
        raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
    users = {}
    for entry in doc["users"]:
        uid = entry["user_id"]
        if uid in users:
            raise ValueError(f"duplicate user {uid!r} in manifest")
        users[uid] = list(entry["clips"])
    return users


def write_manifest(path, users):
    doc = {"version": 1, "users": [{"user_id": u, "clips": list(p)} for u, p in users.items()]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def corpus_streams(seed, n_users, clips_per_user, first_clip=0):
    """Independent generators addressed by position: one per user profile and
    one per (user, clip index), so any clip can be regenerated on its own."""
    def stream(*key):
        return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
    return [(stream(u, 0), [stream(u, 1, i) for i in range(first_clip, first_clip + clips_per_user)])
            for u in range(n_users)]


def synth_clips(n_users, clips_per_user, duration_s, seed, sample_rate=CANONICAL_RATE, prefix="user",
                first_clip=0):
    """{user_id: [clips]} and {user_id: profile}, a pure function of the seed.

    ``first_clip`` skips ahead in each user's clip sequence: the same seed
    with a later ``first_clip`` gives fresh utterances by the same speakers.
    """
    if n_users < 2:
        raise ValueError("a corpus needs at least two users")
    width = max(3, len(str(n_users - 1)))
    clips, profiles = {}, {}
    for u, (prng, clip_rngs) in enumerate(corpus_streams(seed, n_users, clips_per_user, first_clip)):
        uid = f"{prefix}{u:0{width}d}"
        profiles[uid] = SpeakerProfile.random(prng, sample_rate)
        clips[uid] = [synth_utterance(profiles[uid], duration_s, r, sample_rate) for r in clip_rngs]
    return clips, profiles


def build_corpus(n_users, clips_per_user, duration_s, seed, out_dir, sample_rate=CANONICAL_RATE,
                 first_clip=0):
    """Write a synthetic corpus (WAVs + manifest.json) and return it."""
    clips, _ = synth_clips(n_users, clips_per_user, duration_s, seed, sample_rate, first_clip=first_clip)
    os.makedirs(out_dir, exist_ok=True)
    users = {}
    for uid, user_clips in clips.items():
        os.makedirs(os.path.join(out_dir, uid), exist_ok=True)
        users[uid] = []
        for i, clip in enumerate(user_clips):
            rel = f"{uid}/{i:04d}.wav"
            audio_io.save(os.path.join(out_dir, rel), clip)
            users[uid].append(rel)
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), users)
    return Corpus.load(out_dir)


def ingest(src_dir, manifest_path, out_dir, target_rate=CANONICAL_RATE):
    """Copy a user-mapped WAV collection into a canonical 16 kHz corpus."""
    with open(manifest_path) as fh:
        users_in = read_manifest(json.load(fh))
    os.makedirs(out_dir, exist_ok=True)
    users = {}
    for uid, paths in users_in.items():
        os.makedirs(os.path.join(out_dir, uid), exist_ok=True)
        users[uid] = []
        for i, rel_in in enumerate(paths):
            clip = audio_io.load(os.path.join(src_dir, rel_in), target_rate)
            rel = f"{uid}/{i:04d}.wav"
            audio_io.save(os.path.join(out_dir, rel), clip)
            users[uid].append(rel)
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), users)
    return Corpus.load(out_dir)
