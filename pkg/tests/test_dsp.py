import numpy as np
import pytest

from hfsign import dsp
from hfsign.audio_io import AudioClip

RATE = 16000
P = dsp.DEFAULT_STFT


def sine(freq, seconds=1.0, amp=1.0, rate=RATE):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


def direct_dft(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    m = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * m / n)).sum(axis=1)


def test_params_validation():
    with pytest.raises(ValueError):
        dsp.StftParams(500, 250)
    with pytest.raises(ValueError):
        dsp.StftParams(512, 128)


def test_zero_clip_gives_zero_spectrogram():
    spec = dsp.stft(AudioClip(np.zeros(2048), RATE))
    assert spec.coeffs.shape == (257, 7)
    assert not np.any(spec.coeffs)


def test_sine_peak_bin_matches_direct_dft():
    clip = sine(1000)
    spec = dsp.stft(clip)
    frame = clip.samples[256 * 5:256 * 5 + 512].astype(np.float64) * P.window_array()
    oracle = direct_dft(frame)
    np.testing.assert_allclose(spec.coeffs[:, 5], oracle, atol=1e-9)
    assert np.argmax(np.abs(oracle)) == 32
    assert np.all(np.argmax(np.abs(spec.coeffs), axis=0)[:-1] == 32)


def test_impulse_at_frame_centre_is_flat():
    x = np.zeros(1024)
    x[256 + 256] = 1.0  # centre of frame 1
    spec = dsp.stft(AudioClip(x, RATE))
    w = P.window_array()
    np.testing.assert_allclose(np.abs(spec.coeffs[:, 1]), w[256], atol=1e-12)
    np.testing.assert_allclose(np.abs(spec.coeffs[:, 2]), w[0], atol=1e-12)


def test_short_clip_rejected():
    with pytest.raises(ValueError):
        dsp.stft(AudioClip(np.zeros(100), RATE))


def test_final_partial_frame_zero_padded():
    spec = dsp.stft(AudioClip(np.ones(600), RATE))
    assert spec.n_frames == 1 + int(np.ceil((600 - 512) / 256))


def interior_rms(a, b, margin=512):
    d = a[margin:-margin] - b[margin:-margin]
    return np.sqrt(np.mean(d ** 2))


@pytest.mark.parametrize("make", [
    lambda rng: AudioClip(np.clip(rng.normal(0, 0.2, 2 * RATE), -1, 1), RATE),
    lambda rng: sine(1000, 2.0, 0.8),
])
def test_istft_round_trip(make, rng):
    clip = make(rng)
    back = dsp.istft(dsp.stft(clip), len(clip))
    assert interior_rms(back.samples.astype(np.float64), clip.samples) <= 1e-4


def test_istft_zero_and_bad_shape():
    z = dsp.Spectrogram(np.zeros((257, 10), complex), P, RATE)
    assert not np.any(dsp.istft(z).samples)
    with pytest.raises(ValueError):
        dsp.Spectrogram(np.zeros((100, 10), complex), P, RATE)


def test_analyze_synthesize_round_trip_whole_clip(rng):
    clip = AudioClip(np.clip(rng.normal(0, 0.2, RATE), -1, 1), RATE)
    back = dsp.synthesize(dsp.analyze(clip), len(clip))
    assert np.max(np.abs(back.samples - clip.samples)) <= 1e-6


def test_split_band_ranges():
    spec = dsp.stft(sine(1000))
    assert dsp.cutoff_bin(spec, 4000) == 4000 / (RATE / 512) == 128
    lf, mag, phase = dsp.split_bands(spec, 4000)
    assert lf.shape[0] == 128 and mag.shape[0] == 129 and phase.shape[0] == 129


def test_split_recombine_identity(rng):
    clip = AudioClip(np.clip(rng.normal(0, 0.3, RATE), -1, 1), RATE)
    spec = dsp.stft(clip)
    back = dsp.recombine(*dsp.split_bands(spec, 4000), P, RATE)
    assert np.max(np.abs(back.coeffs - spec.coeffs)) <= 1e-12 * np.max(np.abs(spec.coeffs))
    np.testing.assert_array_equal(back.coeffs[:128], spec.coeffs[:128])


def test_pure_low_sine_has_no_hf():
    spec = dsp.stft(sine(1000, amp=0.9))
    _, mag, _ = dsp.split_bands(spec, 4000)
    peak = np.abs(spec.coeffs).max()
    assert 20 * np.log10(mag.max() / peak) < -60


def test_recombine_scaling(rng):
    clip = AudioClip(np.clip(rng.normal(0, 0.3, RATE // 2), -1, 1), RATE)
    spec = dsp.stft(clip)
    lf, mag, phase = dsp.split_bands(spec, 4000)
    zeroed = dsp.recombine(lf, mag * 0, phase)
    assert not np.any(zeroed.coeffs[128:])
    np.testing.assert_array_equal(zeroed.coeffs[:128], spec.coeffs[:128])
    doubled = dsp.recombine(lf, mag * 2, phase)
    hf_in, hf_out = spec.coeffs[128:], doubled.coeffs[128:]
    np.testing.assert_allclose(np.abs(hf_out), 2 * np.abs(hf_in), rtol=1e-12, atol=1e-15)
    big = np.abs(hf_in) > 1e-9
    np.testing.assert_allclose(np.angle(hf_out[big]), np.angle(hf_in[big]), atol=1e-9)


def test_recombine_shape_mismatch():
    with pytest.raises(ValueError):
        dsp.recombine(np.zeros((128, 4), complex), np.zeros((129, 5)), np.zeros((129, 5)))
    with pytest.raises(ValueError):
        dsp.recombine(np.zeros((100, 4), complex), np.zeros((129, 4)), np.zeros((129, 4)))


def test_split_rejects_bad_cutoff():
    spec = dsp.stft(sine(1000))
    for cutoff in (0, 8000, 9000):
        with pytest.raises(ValueError):
            dsp.split_bands(spec, cutoff)


def test_band_profile_zero_floor():
    prof = dsp.band_energy_profile(dsp.stft(AudioClip(np.zeros(4096), RATE)), 600)
    assert len(prof.energies) == 13
    assert np.all(prof.energies == -120.0)


def test_band_profile_sine_band():
    prof = dsp.band_energy_profile(dsp.stft(sine(1000)), 600)
    assert np.argmax(prof.energies) == 1


def test_band_profile_white_noise_flat(rng):
    clip = AudioClip(np.clip(rng.normal(0, 0.1, 10 * RATE), -1, 1), RATE)
    e = dsp.band_energy_profile(dsp.stft(clip), 600).energies
    assert e.max() - e.min() <= 3.0


def test_band_profile_polarity_invariant(rng):
    x = np.clip(rng.normal(0, 0.2, RATE), -1, 1)
    a = dsp.band_energy_profile(dsp.stft(AudioClip(x, RATE)))
    b = dsp.band_energy_profile(dsp.stft(AudioClip(-x, RATE)))
    np.testing.assert_array_equal(a.energies, b.energies)


def test_parseval_consistency(rng):
    x = np.clip(rng.normal(0, 0.2, 4 * RATE), -1, 1)
    spec = dsp.stft(AudioClip(x, RATE))
    one_sided = np.abs(spec.coeffs) ** 2
    # full-spectrum energy: interior bins appear twice
    spec_energy = one_sided[0].sum() + one_sided[-1].sum() + 2 * one_sided[1:-1].sum()
    w = P.window_array()
    xf = np.pad(x, (0, (spec.n_frames - 1) * 256 + 512 - len(x)))
    time_energy = sum(np.sum((w * xf[t * 256:t * 256 + 512]) ** 2) for t in range(spec.n_frames))
    assert abs(spec_energy / (512 * time_energy) - 1) <= 0.01


def test_band_csv(tmp_path):
    prof = dsp.band_energy_profile(dsp.stft(sine(1000)), 600)
    path = tmp_path / "bands.csv"
    dsp.write_band_csv(path, dsp.profile_rows(prof, "orig"))
    lines = path.read_text().splitlines()
    assert lines[0] == "band_start_hz,band_end_hz,mean_energy_db,cohort_label"
    assert lines[2].startswith("600,1200,") and lines[2].endswith(",orig")
    assert len(lines) == 14


def test_patches_and_blend_identity(rng):
    for t in (100, 256, 257, 700):
        band = rng.random((128, t))
        patches, starts = dsp.extract_patches(band)
        assert patches.shape[1:] == (128, 256)
        np.testing.assert_allclose(dsp.blend_patches(patches, starts, t), band, rtol=1e-6)
