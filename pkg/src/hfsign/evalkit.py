"""Evaluation: pooled EER, per-user balanced accuracy, and band-energy
comparisons between cohorts of clips."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp, threatlab
from .signet import sign_audio
from .vernet import score_audio


def eer_candidates(scores):
    """Thresholds to sweep: the lowest score, the midpoints between adjacent
    distinct scores, and a value just above the highest score.

    A midpoint gives the same (FAR, FRR) as the upper score of its pair, so the
    sweep visits every achievable operating point.
    """
    s = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (s[:-1] + s[1:]) / 2
    return np.concatenate([s[:1], mids, [np.nextafter(s[-1], np.inf)]])


def error_rates(pos, neg, thresholds):
    """(FRR, FAR) at each threshold: FRR = frac(pos < t), FAR = frac(neg >= t)."""
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    far = 1 - np.searchsorted(neg, thresholds, side="left") / len(neg)
    return frr, far


def compute_eer(pos_scores, neg_scores):
    """Equal error rate and its threshold, pooled over all scores.

    FAR - FRR falls from 1 to -1 across the sweep.  An exact zero returns
    that point (the lowest such threshold); otherwise the rates are linearly
    interpolated between the two thresholds where the sign changes.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("compute_eer needs at least one positive and one negative score")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("scores must be finite")
    t = eer_candidates(np.concatenate([pos, neg]))
    frr, far = error_rates(pos, neg, t)
    diff = far - frr
    zero = np.flatnonzero(diff == 0)
    if zero.size:
        i = zero[0]
        return float(frr[i]), float(t[i])
    i = int(np.flatnonzero(diff < 0)[0]) - 1  # diff[i] > 0 > diff[i + 1]
    a = diff[i] / (diff[i] - diff[i + 1])
    eer = frr[i] + a * (frr[i + 1] - frr[i])
    return float(eer), float(t[i] + a * (t[i + 1] - t[i]))


def balanced_accuracy(pos_scores, neg_scores, threshold=0.5):
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if len(pos) == 0 or len(pos) != len(neg):
        raise ValueError(f"protocol needs equal, nonzero positive and negative counts; got {len(pos)} and {len(neg)}")
    return 0.5 * np.mean(pos >= threshold) + 0.5 * np.mean(neg < threshold)


@dataclass
class UserScores:
    """Clip-level verifier scores for one user, by role."""
    signed: list = field(default_factory=list)
    original: list = field(default_factory=list)
    clone_of_signed: list = field(default_factory=list)

    @property
    def negatives(self):
        return self.original + self.clone_of_signed


def per_user_accuracy(scores_by_user, threshold=0.5):
    """[(user_id, accuracy)]: signed clips should score >= threshold, originals
    and clones of signed clips below it.  Classes must be balanced per user."""
    return [(u, float(balanced_accuracy(s.signed, s.negatives, threshold)))
            for u, s in scores_by_user.items()]


def score_protocol(clips_by_user, signer, verifier, keys, seed=0, attack=threatlab.AttackParams(),
                   quantize=False):
    """Sign every clip with its user's key and score the verifier on the result.

    Each clip contributes one positive (its signed version) and one negative:
    the unsigned original for the first half of a user's clips, a clone of
    the signed version for the second half.  ``quantize`` passes signed audio
    through a 16-bit WAV round trip before scoring and cloning.
    """
    from .audio_io import read_wav, write_wav
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    out = {}
    for uid, clips in clips_by_user.items():
        key = keys.get(uid)
        s = UserScores()
        half = (len(clips) + 1) // 2
        for i, clip in enumerate(clips):
            signed = sign_audio(clip, key, signer)
            if quantize:
                signed = read_wav(write_wav(signed))
            s.signed.append(score_audio(signed, verifier))
            if i < half:
                s.original.append(score_audio(clip, verifier))
            else:
                s.clone_of_signed.append(score_audio(threatlab.clone_proxy(signed, attack, rng), verifier))
        out[uid] = s
    return out


def quartiles(values):
    v = np.asarray(values, dtype=np.float64)
    return dict(zip(("min", "q1", "median", "q3", "max"), np.percentile(v, [0, 25, 50, 75, 100]).tolist()))


def mean_profile(clips, band_width_hz=600.0, params=dsp.DEFAULT_STFT):
    """Cohort profile: per-band linear power averaged over clips, in dB."""
    if not clips:
        raise ValueError("cohort is empty")
    profs = [dsp.band_energy_profile(dsp.analyze(c, params), band_width_hz) for c in clips]
    power = np.mean([10 ** (p.energies / 10) for p in profs], axis=0)
    return dsp.BandProfile(band_width_hz, dsp.to_db(power))


@dataclass
class BandReport:
    label_a: str
    label_b: str
    profile_a: dsp.BandProfile
    profile_b: dsp.BandProfile

    @property
    def delta_db(self):
        return self.profile_a.energies - self.profile_b.energies

    @property
    def band_edges(self):
        return self.profile_a.edges

    def rows(self):
        delta = dsp.BandProfile(self.profile_a.band_width_hz, self.delta_db)
        return (dsp.profile_rows(self.profile_a, self.label_a) + dsp.profile_rows(self.profile_b, self.label_b)
                + dsp.profile_rows(delta, f"delta:{self.label_a}-{self.label_b}"))

    def write_csv(self, path):
        dsp.write_band_csv(path, self.rows())


def band_attenuation_report(cohort_a, cohort_b, band_width_hz=600.0, label_a="a", label_b="b"):
    """Mean band profile of each cohort and the per-band difference a - b (dB)."""
    if not cohort_a or not cohort_b:
        raise ValueError("both cohorts must be nonempty")
    return BandReport(label_a, label_b, mean_profile(cohort_a, band_width_hz), mean_profile(cohort_b, band_width_hz))


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    threshold: float
    per_user: list  # [(user_id, accuracy)]
    clone_rejection: float
    band_profiles: dict  # cohort label -> list of dB values
    band_width_hz: float
    config: dict

    @property
    def accuracy_quartiles(self):
        return quartiles([a for _, a in self.per_user])

    def to_dict(self):
        d = asdict(self)
        d["per_user"] = [{"user_id": u, "accuracy": a} for u, a in self.per_user]
        d["accuracy_quartiles"] = self.accuracy_quartiles
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_quartiles_csv(self, path, label="signed-vs-attacks"):
        q = self.accuracy_quartiles
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cohort", "min", "q1", "median", "q3", "max"])
            w.writerow([label] + [f"{q[k]:.6g}" for k in ("min", "q1", "median", "q3", "max")])


def evaluate(clips_by_user, signer, verifier, keys, threshold=0.5, seed=0, attack=threatlab.AttackParams(),
             band_width_hz=600.0, config=None, quantize=False):
    """Full protocol: scores, pooled EER, per-user accuracy, clone rejection and
    band profiles for originals, signed clips and clone-proxy outputs."""
    scores = score_protocol(clips_by_user, signer, verifier, keys, seed, attack, quantize)
    pos = [x for s in scores.values() for x in s.signed]
    neg = [x for s in scores.values() for x in s.negatives]
    eer, eer_t = compute_eer(pos, neg)
    clones = [x for s in scores.values() for x in s.clone_of_signed]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA2D]))
    originals = [c for clips in clips_by_user.values() for c in clips]
    signed = [sign_audio(c, keys.get(u), signer) for u, clips in clips_by_user.items() for c in clips]
    cloned = [threatlab.clone_proxy(c, attack, rng) for c in originals]
    profiles = {name: mean_profile(cohort, band_width_hz).energies.tolist()
                for name, cohort in (("original", originals), ("signed", signed), ("clone", cloned))}
    return EvalReport(eer=eer, eer_threshold=eer_t, threshold=threshold,
                      per_user=per_user_accuracy(scores, threshold),
                      clone_rejection=float(np.mean(np.asarray(clones) < threshold)) if clones else float("nan"),
                      band_profiles=profiles, band_width_hz=band_width_hz, config=dict(config or {}))
