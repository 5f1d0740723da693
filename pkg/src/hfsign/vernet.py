"""Public verifier: seven stride-2 3x3 convs (1 -> 512 channels, doubling),
global average pool, one linear unit and a sigmoid."""

from dataclasses import dataclass

import numpy as np

from . import dsp
from .nnkit import LayerSpec, Network, build_layer, global_avg_pool, global_avg_pool_backward, sigmoid

PATCH_SHAPE = (dsp.PATCH_BINS, dsp.PATCH_FRAMES)
ARCHITECTURE = "vernet-cnn7-v1"
CHANNELS = [1, 8, 16, 32, 64, 128, 256, 512]
CONV_LAYERS = [
    (f"c{i + 1}", LayerSpec("conv", CHANNELS[i], CHANNELS[i + 1], stride=2, activation="relu"))
    for i in range(7)
]
HEAD = ("fc", LayerSpec("linear", 512, 1, activation="none"))


@dataclass(frozen=True)
class Verdict:
    score: float
    threshold: float

    @property
    def signed(self):
        return self.score >= self.threshold


class VerifierNet(Network):
    def __init__(self, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(1)
        for name, spec in CONV_LAYERS + [HEAD]:
            self.blocks[name] = build_layer(spec, rng, dtype)
        self._pool_shape = None

    def logits(self, patches):
        patches = np.asarray(patches)
        if patches.ndim == 2:
            patches = patches[None]
        if patches.ndim != 3 or patches.shape[1:] != PATCH_SHAPE:
            raise ValueError(f"patch must be {PATCH_SHAPE}, got {np.shape(patches)}")
        x = patches[:, None].astype(self.dtype, copy=False)
        for name, _ in CONV_LAYERS:
            x = self.blocks[name].forward(x)
        self._pool_shape = x.shape
        return self.blocks["fc"].forward(global_avg_pool(x))[:, 0]

    def forward(self, patches):
        """Scores in (0, 1) for a (N, 128, 256) batch."""
        return sigmoid(self.logits(patches).astype(np.float64))

    def backward_logits(self, grad_logits):
        """Backprop d(loss)/d(logits); returns d(loss)/d(patches) as (N, 128, 256)."""
        g = np.asarray(grad_logits, dtype=self.dtype).reshape(-1, 1)
        g = self.blocks["fc"].backward(g)
        g = global_avg_pool_backward(self._pool_shape, g)
        for name, _ in reversed(CONV_LAYERS):
            g = self.blocks[name].backward(g)
        return g[:, 0]

    def backward(self, grad_scores, scores):
        return self.backward_logits(np.asarray(grad_scores) * scores * (1 - scores))

    def score_patch(self, patch):
        s = self.forward(patch)
        return float(s[0]) if np.ndim(patch) == 2 else s


def score_patch(patch, net: VerifierNet):
    return net.score_patch(patch)


def clip_patches(clip, params: dsp.StftParams = dsp.DEFAULT_STFT, cutoff_hz=dsp.DEFAULT_CUTOFF_HZ):
    """Model-band patches of a clip after trimming trailing digital silence."""
    clip = clip.trim_trailing_silence()
    return dsp.clip_patches(clip.padded_to(1), params, cutoff_hz)


def score_audio(clip, net: VerifierNet, params=dsp.DEFAULT_STFT, cutoff_hz=dsp.DEFAULT_CUTOFF_HZ):
    return float(np.mean(net.forward(clip_patches(clip, params, cutoff_hz))))


def verify_audio(clip, net: VerifierNet, threshold=0.5, params=dsp.DEFAULT_STFT,
                 cutoff_hz=dsp.DEFAULT_CUTOFF_HZ) -> Verdict:
    return Verdict(score_audio(clip, net, params, cutoff_hz), threshold)
