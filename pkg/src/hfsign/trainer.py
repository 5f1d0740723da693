"""Joint training of the signer and the verifier.

Each step signs a batch of original patches (keys optionally DP-noised),
scores signed patches against originals and clone-proxy outputs, and
descends ``L_S + L_phi`` with Adam on both networks.  The verifier's
gradient w.r.t. the signed patches flows back into the signer.
"""

import csv
import functools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import dsp, keydp, threatlab
from .keydp import DPConfig, KeySet
from .nnkit import AdamState, adam_step, bce_logit_grad, bce_loss, l1_loss
from .signet import PreparedClip, SignatureNet
from .vernet import VerifierNet

log = logging.getLogger(__name__)

ROLES = ("signed", "original", "clone_of_signed", "clone_of_original")
LABELS = {"signed": 1, "original": 0, "clone_of_signed": 0, "clone_of_original": 0}


@dataclass
class TrainConfig:
    lr_signature: float = 2e-4
    lr_verifier: float = 2e-5
    batch_size: int = 16
    max_epochs: int = 200
    early_stop_patience: int = 10
    dp_enabled: bool = False
    epsilon: float = keydp.DEFAULT_EPSILON
    seed: int = 0
    validation_fraction: float = 0.2
    # optional wall-clock cap in seconds, checked after each epoch
    time_budget_s: float = None
    attack: threatlab.AttackParams = field(default_factory=threatlab.AttackParams)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (one positive and one negative)")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ValueError("time_budget_s must be positive when set")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if isinstance(self.attack, dict):
            self.attack = threatlab.AttackParams(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in self.attack.items()})

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        d["attack"]["lp_cutoff_range_hz"] = list(self.attack.lp_cutoff_range_hz)
        return d


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class LabeledBatch:
    """One step's verifier inputs.

    For role ``signed`` the patch is the unsigned source; the training step
    signs it so the signer receives gradients.  Other roles hold the final
    verifier input.  With ``resynth`` set, the verifier scores signed patches
    after a round trip through audio, so it only learns the part of the
    signature that survives synthesis.
    """
    patches: np.ndarray  # (B, 128, 256)
    labels: np.ndarray  # (B,) 0/1
    roles: list
    key_index: np.ndarray  # (B,) enrolled-key index of each patch's user
    # per signed row: signed patch -> the same patch re-analysed from audio
    resynth: list = None

    def __post_init__(self):
        for r, y in zip(self.roles, self.labels):
            if LABELS[r] != y:
                raise ValueError(f"role {r} must carry label {LABELS[r]}, got {y}")

    @property
    def signed_mask(self):
        return np.array([r == "signed" for r in self.roles])


@dataclass
class TrainHistory:
    loss_signature: list = field(default_factory=list)
    loss_verifier: list = field(default_factory=list)
    joint: list = field(default_factory=list)
    val_joint: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.joint)

    def append(self, ls, lv, val_joint, val_acc):
        self.loss_signature.append(ls)
        self.loss_verifier.append(lv)
        self.joint.append(ls + lv)
        self.val_joint.append(val_joint)
        self.val_acc.append(val_acc)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_S", "L_phi", "joint", "val_joint", "val_acc"])
            for i in range(len(self)):
                w.writerow([i + 1] + [f"{v:.6g}" for v in (
                    self.loss_signature[i], self.loss_verifier[i], self.joint[i],
                    self.val_joint[i], self.val_acc[i])])


def loss_signature(originals, signed):
    """Mean absolute difference between original and signed patches."""
    return l1_loss(signed, originals)[0]


def loss_verifier(batch: LabeledBatch, verifier: VerifierNet):
    scores = verifier.forward(batch.patches)
    return bce_loss(scores, batch.labels)[0]


@dataclass
class ClipItem:
    user_id: str
    key_index: int
    clip: object
    prep: PreparedClip


class TrainData:
    """Per-clip analysis of a corpus, split per user into train/validation."""

    def __init__(self, corpus, keys: KeySet, validation_fraction=0.2, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A11]))
        self.train, self.val = [], []
        for uid in corpus.user_ids:
            try:
                kidx = keys.index(uid)
            except KeyError:
                raise KeyError(f"corpus user {uid!r} has no enrolled key") from None
            items = [ClipItem(uid, kidx, c, PreparedClip(c)) for c in corpus.clips(uid)]
            order = rng.permutation(len(items))
            n_val = int(round(len(items) * validation_fraction))
            if len(items) > 1:
                n_val = min(max(n_val, 1), len(items) - 1)
            else:
                n_val = 0
            self.val += [items[i] for i in sorted(order[:n_val])]
            self.train += [items[i] for i in sorted(order[n_val:])]
        # every patch of every clip is one training unit
        self.units = [(i, p) for i, it in enumerate(self.train) for p in range(len(it.prep.patches))]
        if not self.units:
            raise ValueError("corpus has no training clips")


def role_counts(batch_size):
    pos = batch_size // 2
    neg = batch_size - pos
    n_orig = (neg + 1) // 2
    n_clone = neg - n_orig
    n_cs = (n_clone + 1) // 2
    return {"signed": pos, "original": n_orig, "clone_of_signed": n_cs,
            "clone_of_original": n_clone - n_cs}


def plan_epoch(n_units, batch_size, epoch_rng):
    """Shuffled unit order cut into batches, each with its role layout."""
    order = epoch_rng.permutation(n_units)
    batches = []
    for a in range(0, n_units, batch_size):
        idx = order[a:a + batch_size]
        if len(idx) < 2:
            continue
        roles = [r for r, c in role_counts(len(idx)).items() for _ in range(c)]
        batches.append((idx, roles))
    return batches


def _patch(item: ClipItem, p):
    return item.prep.patches[p]


def _clone_patch(clip, patch_index, attack, rng):
    cloned = threatlab.clone_proxy(clip, attack, rng)
    return dsp.clip_patches(cloned)[patch_index]


def make_batches(data: TrainData, keys: KeySet, cfg: TrainConfig, epoch_rng, signer: SignatureNet):
    """Yield one epoch of LabeledBatch objects.

    Positives are source patches to be signed; clone-of-signed negatives are
    regenerated from ``signer``'s current weights.
    """
    for idx, roles in plan_epoch(len(data.units), cfg.batch_size, epoch_rng):
        patches, key_index, resynth = [], [], []
        for u, role in zip(idx, roles):
            ci, pi = data.units[u]
            item = data.train[ci]
            key_index.append(item.key_index)
            if role == "signed":
                resynth.append(functools.partial(item.prep.resynthesize_patch, pi))
            if role in ("signed", "original"):
                patches.append(_patch(item, pi))
            elif role == "clone_of_original":
                patches.append(_clone_patch(item.clip, pi, cfg.attack, epoch_rng))
            else:
                signed = signer.sign_patch(item.prep.patches, keys[item.key_index])
                audio = item.prep.synthesize(signed)
                patches.append(_clone_patch(audio, pi, cfg.attack, epoch_rng))
        labels = np.array([LABELS[r] for r in roles])
        yield LabeledBatch(np.stack(patches).astype(np.float32), labels, list(roles),
                           np.array(key_index), resynth)


def joint_gradients(signer, verifier, batch: LabeledBatch, key_vectors, paths=("signature", "verifier")):
    """Forward both nets and leave d(L_S + L_phi) in their grads; returns (L_S, L_phi).

    ``paths`` selects which loss terms send gradient into the signer (the
    verifier always receives its own BCE gradient).  The audio round trip of
    ``batch.resynth`` is treated as identity in the backward pass.
    """
    mask = batch.signed_mask
    src = batch.patches[mask]
    signer.zero_grad()
    verifier.zero_grad()
    signed = signer.forward(src, key_vectors)
    ls, g_ls = l1_loss(signed, src)
    inputs = batch.patches.astype(signed.dtype, copy=True)
    if batch.resynth:
        inputs[mask] = np.stack([f(x) for f, x in zip(batch.resynth, signed)])
    else:
        inputs[mask] = signed
    scores = verifier.forward(inputs)
    lv, _ = bce_loss(scores, batch.labels)
    g_in = verifier.backward_logits(bce_logit_grad(scores, batch.labels))
    g = np.zeros_like(signed)
    if "signature" in paths:
        g = g + g_ls
    if "verifier" in paths:
        g = g + g_in[mask]
    signer.backward(g)
    return ls, lv


def train_step(signer, verifier, batch: LabeledBatch, key_vectors, opt_s, opt_v):
    """One joint update; returns (L_S, L_phi)."""
    ls, lv = joint_gradients(signer, verifier, batch, key_vectors)
    adam_step(opt_s, signer.named_params(), signer.named_grads())
    adam_step(opt_v, verifier.named_params(), verifier.named_grads())
    return ls, lv


@dataclass
class ValidationSet:
    """Fixed negatives for validation; signed inputs are recomputed per epoch."""
    sources: np.ndarray
    key_index: np.ndarray
    items: list
    clone_originals: np.ndarray
    draws: list
    noise_seeds: list


def build_validation(data: TrainData, cfg: TrainConfig):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11D]))
    sources, kidx, items, clones, draws, seeds = [], [], [], [], [], []
    for it in data.val:
        draw = threatlab.draw_attack(cfg.attack, rng, it.clip.sample_rate)
        seed = int(rng.integers(2 ** 31))
        cloned = threatlab.clone_proxy(it.clip, cfg.attack, np.random.default_rng(seed), draw=draw)
        cpatches = dsp.clip_patches(cloned)
        for p in range(len(it.prep.patches)):
            sources.append(it.prep.patches[p])
            kidx.append(it.key_index)
            clones.append(cpatches[p])
        items.append(it)
        draws.append(draw)
        seeds.append(seed)
    return ValidationSet(np.array(sources), np.array(kidx), items, np.array(clones), draws, seeds)


def _sign_batches(signer, patches, key_vectors, batch_size=8):
    out = np.empty_like(patches)
    for a in range(0, len(patches), batch_size):
        out[a:a + batch_size] = signer.forward(patches[a:a + batch_size], key_vectors[a:a + batch_size])
    signer.release()
    return out


def _score_batches(verifier, patches, batch_size=64):
    return np.concatenate([verifier.forward(patches[a:a + batch_size])
                           for a in range(0, len(patches), batch_size)])


def evaluate_validation(signer, verifier, val: ValidationSet, keys: KeySet, cfg: TrainConfig):
    """(joint loss, balanced accuracy) on the validation clips with clean keys.

    Signed positives are scored as re-analysed from the synthesized audio.
    """
    if len(val.sources) == 0:
        return float("nan"), float("nan")
    kv = keys.matrix()[val.key_index]
    signed = _sign_batches(signer, val.sources, kv)
    ls = loss_signature(val.sources, signed)
    heard, clone_signed = [], []
    offset = 0
    for it, draw, seed in zip(val.items, val.draws, val.noise_seeds):
        n = len(it.prep.patches)
        audio = it.prep.synthesize(signed[offset:offset + n])
        heard.extend(dsp.clip_patches(audio))
        cloned = threatlab.clone_proxy(audio, cfg.attack, np.random.default_rng(seed), draw=draw)
        clone_signed.extend(dsp.clip_patches(cloned))
        offset += n
    groups = {"signed": np.array(heard), "original": val.sources,
              "clone_of_signed": np.array(clone_signed), "clone_of_original": val.clone_originals}
    scores = {r: _score_batches(verifier, g) for r, g in groups.items()}
    # positives carry half the weight, negatives share the other half
    lv = 0.5 * bce_loss(scores["signed"], np.ones(len(signed)))[0]
    acc = 0.5 * np.mean(scores["signed"] >= 0.5)
    for r in ROLES[1:]:
        lv += bce_loss(scores[r], np.zeros(len(scores[r])))[0] / 6
        acc += np.mean(scores[r] < 0.5) / 6
    return ls + lv, float(acc)


def _snapshot(net):
    return {k: v.copy() for k, v in net.named_params().items()}


def train_joint(corpus, keys: KeySet, cfg: TrainConfig, signer=None, verifier=None, data=None,
                on_epoch=None):
    """Train both networks; returns ``(signer, verifier, history)`` with the
    weights of the best validation epoch."""
    if len(corpus.user_ids) < 2:
        raise ValueError("training needs at least two users")
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, epoch_seq, noise_seq = np.random.default_rng(seeds[0]), seeds[1], seeds[2]
    signer = signer or SignatureNet(init_rng)
    verifier = verifier or VerifierNet(init_rng)
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return signer, verifier, history
    data = data or TrainData(corpus, keys, cfg.validation_fraction, cfg.seed)
    val = build_validation(data, cfg)
    dp = DPConfig.for_keys(keys, cfg.epsilon) if cfg.dp_enabled else None
    noise_rng = np.random.default_rng(noise_seq)
    opt_s = AdamState(lr=cfg.lr_signature)
    opt_v = AdamState(lr=cfg.lr_verifier)
    key_bits = keys.matrix()
    best = (math.inf, _snapshot(signer), _snapshot(verifier))
    stale = 0
    started = time.monotonic()
    epoch_seqs = epoch_seq.spawn(cfg.max_epochs)
    for epoch in range(cfg.max_epochs):
        epoch_rng = np.random.default_rng(epoch_seqs[epoch])
        sum_ls = sum_lv = 0.0
        n_steps = 0
        for b, batch in enumerate(make_batches(data, keys, cfg, epoch_rng, signer)):
            kidx = batch.key_index[batch.signed_mask]
            kv = key_bits[kidx]
            if dp is not None:
                kv = np.stack([keydp.noised_key(keys[i], dp, noise_rng).reals for i in kidx])
            ls, lv = train_step(signer, verifier, batch, kv, opt_s, opt_v)
            if not (np.isfinite(ls) and np.isfinite(lv)):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1}: L_S={ls}, L_phi={lv}")
            sum_ls += ls
            sum_lv += lv
            n_steps += 1
        val_joint, val_acc = evaluate_validation(signer, verifier, val, keys, cfg)
        history.append(sum_ls / n_steps, sum_lv / n_steps, val_joint, val_acc)
        log.info("epoch %d: L_S=%.5f L_phi=%.4f val_joint=%.4f val_acc=%.3f", epoch + 1,
                 sum_ls / n_steps, sum_lv / n_steps, val_joint, val_acc)
        if on_epoch is not None:
            on_epoch(epoch, history, signer, verifier)
        if val_joint < best[0]:
            best = (val_joint, _snapshot(signer), _snapshot(verifier))
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                log.info("early stop after epoch %d (best %d)", epoch + 1, history.best_epoch + 1)
                break
        if cfg.time_budget_s is not None and time.monotonic() - started >= cfg.time_budget_s:
            log.info("time budget reached after epoch %d (best %d)", epoch + 1, history.best_epoch + 1)
            break
    signer.load_params(best[1])
    verifier.load_params(best[2])
    return signer, verifier, history
