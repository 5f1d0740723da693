"""Keyed signature network: a U-Net over HF magnitude patches.

Encoder E1..E5 (E1 stride 1, the rest stride 2) takes a 1x128x256 patch to a
256x8x16 bottleneck.  The 32 key values are broadcast to 32 constant planes,
concatenated to the bottleneck and fused back to 256 channels.  Four
transposed-conv stages upsample, each followed by a concat with the encoder
map of the same resolution, and a zero-initialised 1x1 projection predicts a
magnitude delta.  The signed patch is ``relu(patch + delta)``.
"""

import numpy as np

from . import dsp
from .keydp import KEY_BITS, PrivateKey
from .nnkit import Activation, LayerSpec, Network, build_layer, concat_channels, split_channels

PATCH_SHAPE = (dsp.PATCH_BINS, dsp.PATCH_FRAMES)
ARCHITECTURE = "signet-unet-v1"

ENCODER = [
    ("e1", LayerSpec("conv", 1, 16, stride=1, activation="relu")),
    ("e2", LayerSpec("conv", 16, 32, stride=2, activation="relu")),
    ("e3", LayerSpec("conv", 32, 64, stride=2, activation="relu")),
    ("e4", LayerSpec("conv", 64, 128, stride=2, activation="relu")),
    ("e5", LayerSpec("conv", 128, 256, stride=2, activation="relu")),
]
FUSION = ("fuse", LayerSpec("conv", 256 + KEY_BITS, 256, stride=1, activation="relu"))
DECODER = [
    ("d1", LayerSpec("conv_transpose", 256, 128, stride=2, activation="relu")),
    ("d2", LayerSpec("conv_transpose", 256, 64, stride=2, activation="relu")),
    ("d3", LayerSpec("conv_transpose", 128, 32, stride=2, activation="relu")),
    ("d4", LayerSpec("conv_transpose", 64, 16, stride=2, activation="relu")),
]
PROJECTION = ("out", LayerSpec("conv", 32, 1, kernel=1, stride=1, padding=0, activation="none"))
# decoder stage -> encoder map it is concatenated with
SKIPS = {"d1": "e4", "d2": "e3", "d3": "e2", "d4": "e1"}


def key_view(key):
    """Real-valued (32,) key input: a PrivateKey's bits, or an already-noised vector."""
    if isinstance(key, PrivateKey):
        return key.as_floats()
    arr = np.asarray(getattr(key, "reals", key), dtype=np.float64)
    if arr.shape[-1] != KEY_BITS:
        raise ValueError(f"key vector must have {KEY_BITS} entries, got shape {arr.shape}")
    return arr


class SignatureNet(Network):
    def __init__(self, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        for name, spec in ENCODER + [FUSION] + DECODER:
            self.blocks[name] = build_layer(spec, rng, dtype)
        name, spec = PROJECTION
        self.blocks[name] = build_layer(spec, dtype=dtype, zero_init=True)
        # keeps signed magnitudes nonnegative
        self.floor = Activation("relu")

    def activations(self):
        return super().activations() + [self.floor]

    def _check(self, patches):
        patches = np.asarray(patches)
        squeeze = patches.ndim == 2
        if squeeze:
            patches = patches[None]
        if patches.ndim == 4 and patches.shape[1] == 1:
            patches = patches[:, 0]
        if patches.ndim != 3 or patches.shape[1:] != PATCH_SHAPE:
            raise ValueError(f"patch must be {PATCH_SHAPE}, got {np.shape(patches)}")
        return patches.astype(self.dtype, copy=False), squeeze

    def delta(self, patches, keys):
        """Raw network output for (N, 128, 256) patches and (N, 32) key vectors."""
        x = patches[:, None]
        feats = {}
        for name, _ in ENCODER:
            x = self.blocks[name].forward(x)
            feats[name] = x
        n, _, bh, bw = x.shape
        keys = np.asarray(keys, dtype=self.dtype).reshape(n, KEY_BITS)
        planes = np.broadcast_to(keys[:, :, None, None], (n, KEY_BITS, bh, bw))
        x = self.blocks["fuse"].forward(concat_channels(x, planes))
        for name, _ in DECODER:
            x = self.blocks[name].forward(x)
            x = concat_channels(x, feats[SKIPS[name]])
        return self.blocks["out"].forward(x)[:, 0]

    def forward(self, patches, keys):
        """Signed patches, caching state for :meth:`backward`."""
        patches, squeeze = self._check(patches)
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if keys.shape[0] == 1 and patches.shape[0] > 1:
            keys = np.repeat(keys, patches.shape[0], axis=0)
        out = self.floor.forward(patches + self.delta(patches, keys))
        return out[0] if squeeze else out

    def backward(self, grad_signed):
        """Accumulate parameter gradients given d(loss)/d(signed patches)."""
        g = self.floor.backward(np.asarray(grad_signed, dtype=self.dtype).reshape(-1, *PATCH_SHAPE))
        g = self.blocks["out"].backward(g[:, None])
        skip_grads = {}
        for name, spec in reversed(DECODER):
            up_ch = spec.out_channels
            skip_ch = g.shape[1] - up_ch
            g_up, g_skip = split_channels(g, [up_ch, skip_ch])
            skip_grads[SKIPS[name]] = g_skip
            g = self.blocks[name].backward(g_up)
        g = self.blocks["fuse"].backward(g)
        g = g[:, :256]
        for name, _ in reversed(ENCODER):
            g = g + skip_grads.get(name, 0)
            g = self.blocks[name].backward(g, need_input_grad=name != "e1")

    def sign_patch(self, patch, key):
        """Signed copy of one 128x256 patch (or a batch) under a key."""
        out = self.forward(patch, key_view(key))
        self.release()
        return out

    def release(self):
        """Drop cached forward state (inference-only calls)."""
        for blk in self.blocks.values():
            blk.core._x = None
            if hasattr(blk.core, "_cols"):
                blk.core._cols = None
            blk.act._y = None
        self.floor._y = None


def sign_patch(patch, key, net: SignatureNet):
    return net.sign_patch(patch, key)


class PreparedClip:
    """Analysis of a clip split into what the signer changes and what it keeps."""

    def __init__(self, clip, params=dsp.DEFAULT_STFT, cutoff_hz=dsp.DEFAULT_CUTOFF_HZ):
        self.length = len(clip)
        self.sample_rate = clip.sample_rate
        self.params = params
        spec = dsp.analyze(clip, params)
        self.lf, self.mag, self.phase = dsp.split_bands(spec, cutoff_hz)
        self.patches, self.starts = dsp.extract_patches(self.mag[:dsp.PATCH_BINS])

    def synthesize(self, signed_patches):
        mag = self.mag.copy()
        mag[:dsp.PATCH_BINS] = dsp.blend_patches(signed_patches, self.starts, mag.shape[1])
        spec = dsp.recombine(self.lf, mag, self.phase, self.params, self.sample_rate)
        return dsp.synthesize(spec, self.length)

    def resynthesize_patch(self, p, signed_patch):
        """Patch ``p`` as re-analysed from audio where only that patch is signed."""
        patches = self.patches.copy()
        patches[p] = signed_patch
        return dsp.clip_patches(self.synthesize(patches), self.params)[p]


def sign_audio(clip, key, net: SignatureNet, params: dsp.StftParams = dsp.DEFAULT_STFT,
               cutoff_hz=dsp.DEFAULT_CUTOFF_HZ, batch_size=8):
    """Sign a clip with the clean key.

    Model-band magnitudes are replaced by the signer's output (overlapping
    patches crossfaded); HF phase, LF bins and the Nyquist bin are kept.
    """
    prep = PreparedClip(clip, params, cutoff_hz)
    kv = key_view(key)
    signed = np.empty_like(prep.patches)
    for a in range(0, len(signed), batch_size):
        signed[a:a + batch_size] = net.sign_patch(prep.patches[a:a + batch_size], kv)
    return prep.synthesize(signed)
