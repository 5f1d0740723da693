import struct

import numpy as np
import pytest

from hfsign import checkpoint
from hfsign.signet import SignatureNet
from hfsign.vernet import VerifierNet


@pytest.fixture(scope="module")
def nets():
    return SignatureNet(np.random.default_rng(0)), VerifierNet(np.random.default_rng(1))


def test_round_trip(tmp_path, nets):
    s, v = nets
    checkpoint.save_signer(tmp_path / "s.sspc", s)
    checkpoint.save_verifier(tmp_path / "v.sspc", v)
    s2, hs = checkpoint.load_signer(tmp_path / "s.sspc")
    v2, hv = checkpoint.load_verifier(tmp_path / "v.sspc")
    assert hs["confidential"] is True and hv["confidential"] is False
    assert hs["cutoff_hz"] == 4000 and hs["stft"] == {"n_fft": 512, "hop": 256, "window": "hann"}
    for a, b in ((s, s2), (v, v2)):
        for k, x in a.named_params().items():
            np.testing.assert_array_equal(x, b.named_params()[k])


def test_layout(nets):
    _, v = nets
    data = checkpoint.dumps(v.named_params(), "vernet-cnn7-v1", confidential=False)
    assert data[:4] == b"SSPC"
    version, hlen = struct.unpack("<HI", data[4:10])
    assert version == 1
    n_floats = sum(x.size for x in v.named_params().values())
    assert len(data) == 10 + hlen + 4 * n_floats + 4


def test_verifier_path_refuses_signer(tmp_path, nets):
    checkpoint.save_signer(tmp_path / "s.sspc", nets[0])
    with pytest.raises(checkpoint.ConfidentialCheckpointError):
        checkpoint.load_verifier(tmp_path / "s.sspc")


def test_corruption_detected(nets):
    _, v = nets
    data = bytearray(checkpoint.dumps(v.named_params(), "vernet-cnn7-v1", confidential=False))
    data[-100] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointError, match="CRC"):
        checkpoint.loads(bytes(data))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXX" + bytes(data[4:]))


def test_architecture_mismatch(tmp_path, nets):
    checkpoint.save_verifier(tmp_path / "v.sspc", nets[1])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_signer(tmp_path / "v.sspc")
