"""Brute-force EER written independently of the library: exact rational rates
at every candidate threshold, found by plain loops."""

from fractions import Fraction


def brute_force_eer(pos, neg):
    scores = sorted(set(pos) | set(neg))
    cands = [scores[0]] + [(a + b) / 2 for a, b in zip(scores, scores[1:])] + [float("inf")]

    def rates(t):
        frr = Fraction(sum(1 for p in pos if p < t), len(pos))
        far = Fraction(sum(1 for n in neg if n >= t), len(neg))
        return frr, far

    prev = None
    for t in cands:
        frr, far = rates(t)
        d = far - frr
        if d == 0:
            return float(frr)
        if d < 0:
            (pfrr, pfar, pd) = prev
            a = pd / (pd - d)
            return float(pfrr + a * (frr - pfrr))
        prev = (frr, far, d)
    raise AssertionError("FAR - FRR never reached zero")
