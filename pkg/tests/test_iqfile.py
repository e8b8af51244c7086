import numpy as np
import pytest

from nyqwdm.iqfile import IqFormatError, decode, encode, read_iq, write_iq
from nyqwdm.signal import DualPolSignal, SampledSignal


def sig(n=100, seed=0):
    rng = np.random.default_rng(seed)
    return SampledSignal(rng.standard_normal(n) + 1j * rng.standard_normal(n), 25e9, 12.5e9)


class TestNyqiq1:
    """Binary IQ capture format."""

    def test_single_pol_round_trip(self, tmp_path):
        s = sig()
        write_iq(tmp_path / "a.iq", s)
        back = read_iq(tmp_path / "a.iq")
        assert isinstance(back, SampledSignal)
        assert np.array_equal(back.samples, s.samples)
        assert back.sample_rate == s.sample_rate and back.center_freq == s.center_freq

    def test_dual_pol_round_trip(self):
        d = DualPolSignal(sig(64, 1), sig(64, 2))
        back = decode(encode(d))
        assert isinstance(back, DualPolSignal)
        assert np.array_equal(back.as_array(), d.as_array())

    def test_exact_size(self):
        assert len(encode(sig(100))) == 34 + 100 * 16
        assert len(encode(DualPolSignal(sig(10), sig(10, 3)))) == 34 + 2 * 10 * 16

    def test_bad_magic(self):
        data = bytearray(encode(sig()))
        data[0:6] = b"NOTIQ1"
        with pytest.raises(IqFormatError):
            decode(bytes(data))

    def test_wrong_size(self):
        data = encode(sig())
        with pytest.raises(IqFormatError):
            decode(data[:-1])
        with pytest.raises(IqFormatError):
            decode(data[:10])

    def test_bad_version(self):
        data = bytearray(encode(sig()))
        data[6] = 9
        with pytest.raises(IqFormatError):
            decode(bytes(data))
