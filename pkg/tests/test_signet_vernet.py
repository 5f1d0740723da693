import numpy as np
import pytest

from hfsign import dsp, keydp, signet, vernet
from hfsign.audio_io import AudioClip


@pytest.fixture(scope="module")
def nets():
    return signet.SignatureNet(np.random.default_rng(0)), vernet.VerifierNet(np.random.default_rng(1))


@pytest.fixture(scope="module")
def keys():
    return keydp.generate_keys(3, np.random.default_rng(4))


def noisy_clip(seed, seconds=4.0):
    r = np.random.default_rng(seed)
    return AudioClip(np.clip(r.normal(0, 0.2, int(seconds * 16000)), -1, 1), 16000)


def test_architecture_layout(nets):
    s, v = nets
    shapes = dict(s.layer_list())
    assert shapes["e1.weight"] == [16, 1, 3, 3]
    assert shapes["e5.weight"] == [256, 128, 3, 3]
    assert shapes["fuse.weight"] == [256, 288, 3, 3]
    assert shapes["d1.weight"] == [256, 128, 3, 3]
    assert shapes["d4.weight"] == [64, 16, 3, 3]
    assert shapes["out.weight"] == [1, 32, 1, 1]
    convs = [k for k in dict(v.layer_list()) if k.startswith("c") and k.endswith("weight")]
    assert len(convs) == 7
    assert dict(v.layer_list())["c7.weight"] == [512, 256, 3, 3]
    assert dict(v.layer_list())["fc.weight"] == [1, 512]


def test_fresh_signer_is_identity(nets, keys, rng):
    s, _ = nets
    p = rng.random(signet.PATCH_SHAPE).astype(np.float32)
    np.testing.assert_array_equal(s.sign_patch(p, keys[0]), p)


def test_signed_patch_nonnegative_and_deterministic(keys, rng):
    s = signet.SignatureNet(np.random.default_rng(3))
    s.blocks["out"].params["weight"][:] = np.random.default_rng(5).normal(0, 0.5, (1, 32, 1, 1))
    p = rng.random(signet.PATCH_SHAPE).astype(np.float32)
    a = s.sign_patch(p, keys[0])
    assert a.shape == signet.PATCH_SHAPE
    assert np.all(a >= 0)
    np.testing.assert_array_equal(a, s.sign_patch(p, keys[0]))
    b = s.sign_patch(p, keys[1])
    assert np.max(np.abs(a - b)) > 0
    loss = np.mean(np.abs(a - p))
    from hfsign.trainer import loss_signature
    assert loss_signature(p, a) == pytest.approx(loss, rel=1e-6)


def test_signer_rejects_wrong_shape(nets, keys):
    with pytest.raises(ValueError):
        nets[0].sign_patch(np.zeros((64, 256)), keys[0])
    with pytest.raises(ValueError):
        nets[0].sign_patch(np.zeros((128, 256)), np.zeros(31))


def test_zero_projection_sign_audio_is_transparent(nets, keys):
    clip = noisy_clip(1, 3.0)
    out = signet.sign_audio(clip, keys[0], nets[0])
    assert len(out) == len(clip)
    assert np.sqrt(np.mean((out.samples - clip.samples) ** 2)) <= 1e-4


def test_sign_audio_keeps_low_band(keys):
    s = signet.SignatureNet(np.random.default_rng(3))
    s.blocks["out"].params["weight"][:] = 0.05
    clip = noisy_clip(2, 3.0)
    out = signet.sign_audio(clip, keys[0], s)
    a, b = dsp.analyze(clip), dsp.analyze(out)
    # spectrogram-level LF is copied verbatim; resynthesis of the edited (inconsistent)
    # spectrogram leaks only a residue far below the signal
    d = np.abs(a.coeffs - b.coeffs) ** 2
    lf_err_db = 10 * np.log10(d[:120].sum() / (np.abs(a.coeffs[:120]) ** 2).sum())
    assert lf_err_db <= -60
    assert d[128:].sum() > 1e4 * d[:120].sum()
    pa, pb = dsp.band_energy_profile(a).energies, dsp.band_energy_profile(b).energies
    assert np.all(np.abs(pb - pa)[:6] <= 0.01)


def test_signed_lf_bins_copied_before_synthesis(keys):
    s = signet.SignatureNet(np.random.default_rng(3))
    s.blocks["out"].params["weight"][:] = 0.05
    prep = signet.PreparedClip(noisy_clip(3, 3.0))
    signed = s.sign_patch(prep.patches, keys[0])
    mag = prep.mag.copy()
    mag[:dsp.PATCH_BINS] = dsp.blend_patches(signed, prep.starts, mag.shape[1])
    spec = dsp.recombine(prep.lf, mag, prep.phase)
    np.testing.assert_array_equal(spec.coeffs[:128], prep.lf)
    np.testing.assert_array_equal(np.abs(spec.coeffs[256]), prep.mag[128])


def test_verifier_scores(nets, rng):
    _, v = nets
    p = rng.random(vernet.PATCH_SHAPE)
    s1 = v.score_patch(p)
    assert 0 < s1 < 1 and np.isfinite(s1)
    assert s1 == v.score_patch(p)
    with pytest.raises(ValueError):
        v.score_patch(np.zeros((128, 128)))


def test_verifier_output_is_one_scalar(nets, rng):
    _, v = nets
    assert v.forward(rng.random((3, 128, 256))).shape == (3,)


def test_verifier_spatial_shrink(nets, rng):
    _, v = nets
    v.logits(rng.random((1, 128, 256)))
    assert v._pool_shape == (1, 512, 1, 2)


def test_verdict_threshold():
    assert vernet.Verdict(0.5, 0.5).signed
    assert not vernet.Verdict(0.49, 0.5).signed


def test_trailing_silence_invariance(nets):
    _, v = nets
    clip = noisy_clip(5, 4.2)
    for pad in (1, 100, 255):
        padded = AudioClip(np.concatenate([clip.samples, np.zeros(pad, np.float32)]), 16000)
        assert vernet.score_audio(padded, v) == vernet.score_audio(clip, v)


def test_score_audio_averages_patches(nets):
    _, v = nets
    clip = noisy_clip(6, 10.0)
    patches = vernet.clip_patches(clip)
    assert len(patches) > 1
    assert vernet.score_audio(clip, v) == pytest.approx(float(np.mean(v.forward(patches))), rel=1e-12)




def test_resynthesize_patch_matches_audio_path(rng):
    prep = signet.PreparedClip(noisy_clip(4, 6.0))
    assert len(prep.patches) >= 2
    p = 1
    np.testing.assert_allclose(prep.resynthesize_patch(p, prep.patches[p]), prep.patches[p], atol=1e-5)
    edited = prep.patches[p] * (1 + 0.5 * rng.random(prep.patches[p].shape)).astype(np.float32)
    got = prep.resynthesize_patch(p, edited)
    patches = prep.patches.copy()
    patches[p] = edited
    np.testing.assert_array_equal(got, dsp.clip_patches(prep.synthesize(patches))[p])
    # random magnitude edits are not a consistent STFT, so part of the edit is lost
    lost = np.abs(got - edited).sum() / np.abs(edited - prep.patches[p]).sum()
    assert 0.05 < lost < 1
