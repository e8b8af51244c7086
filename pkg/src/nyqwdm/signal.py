"""Sampled waveform containers and spectral-domain primitives.

All spectral operators (delay, brick-wall filtering, resampling) act on the
circular extension of the signal. Callers that care about block edges add
guard symbols and drop them afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import fft as sfft

#: Global optical reference frequency used for wavelength conversions [Hz].
F_REF = 193.4e12
#: Speed of light in vacuum [m/s].
C_LIGHT = 299_792_458.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled complex baseband waveform.

    ``center_freq`` is the offset of the digital baseband center from
    :data:`F_REF`. When power-calibrated, ``|a|**2`` is instantaneous power
    in mW.
    """

    samples: np.ndarray
    sample_rate: float
    center_freq: float = 0.0

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.complex128, copy=True).reshape(-1)
        if x.size < 1:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal samples must be finite")
        if not (np.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate!r}")
        if not np.isfinite(self.center_freq):
            raise ValueError("center_freq must be finite")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "center_freq", float(self.center_freq))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def energy(self) -> float:
        """Time-integrated energy, ``sum |a|^2 / fs``."""
        return float(np.vdot(self.samples, self.samples).real) / self.sample_rate

    def with_samples(self, samples: np.ndarray, sample_rate: float | None = None) -> "SampledSignal":
        return SampledSignal(
            samples,
            self.sample_rate if sample_rate is None else sample_rate,
            self.center_freq,
        )


@dataclass(frozen=True, eq=False)
class DualPolSignal:
    """Two aligned polarization tributaries."""

    pol_x: SampledSignal
    pol_y: SampledSignal

    def __post_init__(self):
        x, y = self.pol_x, self.pol_y
        if x.sample_rate != y.sample_rate:
            raise ValueError("polarizations must share sample_rate")
        if x.center_freq != y.center_freq:
            raise ValueError("polarizations must share center_freq")
        if len(x) != len(y):
            raise ValueError("polarizations must have equal length")

    @classmethod
    def from_arrays(cls, x, y, sample_rate: float, center_freq: float = 0.0) -> "DualPolSignal":
        return cls(SampledSignal(x, sample_rate, center_freq), SampledSignal(y, sample_rate, center_freq))

    @property
    def sample_rate(self) -> float:
        return self.pol_x.sample_rate

    @property
    def center_freq(self) -> float:
        return self.pol_x.center_freq

    def __len__(self) -> int:
        return len(self.pol_x)

    @property
    def pols(self) -> tuple[SampledSignal, SampledSignal]:
        return self.pol_x, self.pol_y

    def as_array(self) -> np.ndarray:
        """Samples stacked as a ``(2, n)`` array."""
        return np.stack([self.pol_x.samples, self.pol_y.samples])

    def apply(self, fn: Callable[[SampledSignal], SampledSignal]) -> "DualPolSignal":
        return DualPolSignal(fn(self.pol_x), fn(self.pol_y))

    def energy(self) -> float:
        return self.pol_x.energy() + self.pol_y.energy()


@dataclass(frozen=True, eq=False)
class SpectrumView:
    """Two-sided power spectral density on a centered frequency grid.

    ``psd`` is linear (mW/Hz when the signal is power-calibrated);
    :attr:`psd_db` gives the dB-scaled view used for export.
    """

    bin_freqs: np.ndarray
    psd: np.ndarray
    resolution_bw: float
    center_freq: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.bin_freqs, dtype=float)
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("bin_freqs must be strictly increasing")
        object.__setattr__(self, "bin_freqs", _frozen(f.copy()))
        object.__setattr__(self, "psd", _frozen(np.asarray(self.psd, dtype=float).copy()))

    @property
    def psd_db(self) -> np.ndarray:
        return 10 * np.log10(np.maximum(self.psd, 1e-300))

    def integrated_power(self) -> float:
        return float(np.sum(self.psd) * self.resolution_bw)


class PowerReading(NamedTuple):
    mw: float
    dbm: float


def fft_freqs(n: int, sample_rate: float) -> np.ndarray:
    """Bin frequencies of an unshifted length-``n`` DFT [Hz]."""
    return sfft.fftfreq(n, 1.0 / sample_rate)


def freq_to_wavelength_nm(offset_hz: float) -> float:
    """Vacuum wavelength of ``F_REF + offset_hz`` in nm."""
    return C_LIGHT / (F_REF + offset_hz) * 1e9


def _apply_response(sig: SampledSignal, response: np.ndarray) -> SampledSignal:
    return sig.with_samples(sfft.ifft(sfft.fft(sig.samples) * response))


def frequency_shift(sig: SampledSignal, df: float) -> SampledSignal:
    """Multiply by ``exp(j 2 pi df t)``.

    The shift is physical: ``center_freq`` metadata is left untouched.
    """
    if not np.isfinite(df):
        raise ValueError("frequency shift must be finite")
    if abs(df) >= sig.sample_rate / 2:
        raise ValueError(f"|df| = {abs(df):g} Hz must be below fs/2 = {sig.sample_rate / 2:g} Hz")
    if df == 0:
        return sig
    n = np.arange(len(sig))
    return sig.with_samples(sig.samples * np.exp(2j * np.pi * df / sig.sample_rate * n))


def spectral_delay(sig: SampledSignal, tau: float) -> SampledSignal:
    """Circular delay by ``tau`` seconds; negative values advance."""
    if tau == 0:
        return sig
    f = fft_freqs(len(sig), sig.sample_rate)
    return _apply_response(sig, np.exp(-2j * np.pi * f * tau))


def apply_delay(sig: SampledSignal, tau: float) -> SampledSignal:
    """Delay ``sig`` by ``tau >= 0`` seconds (fractional, circular)."""
    if not np.isfinite(tau) or tau < 0:
        raise ValueError(f"delay must be finite and non-negative, got {tau!r}")
    return spectral_delay(sig, tau)


def brick_response(n: int, sample_rate: float, f_lo: float, f_hi: float) -> np.ndarray:
    """Per-bin weights of the ideal band-pass ``(f_lo, f_hi)``.

    Bins whose center coincides with a band edge get weight 0.5. The bin at
    ``-fs/2`` of an even-length grid also stands for ``+fs/2`` and collects
    the weight of both aliases.
    """
    half = sample_rate / 2
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)):
        raise ValueError("band edges must be finite")
    if not (-half <= f_lo < f_hi <= half):
        raise ValueError(f"invalid band ({f_lo:g}, {f_hi:g}) Hz for fs = {sample_rate:g} Hz")
    f = fft_freqs(n, sample_rate)
    tol = 1e-6 * sample_rate / n

    def weight(freq):
        w = np.where((freq > f_lo + tol) & (freq < f_hi - tol), 1.0, 0.0)
        edge = (np.abs(freq - f_lo) <= tol) | (np.abs(freq - f_hi) <= tol)
        return np.where(edge, 0.5, w)

    w = weight(f)
    if n % 2 == 0:
        w[n // 2] = weight(np.array([-half]))[0] + weight(np.array([half]))[0]
    return w


def brick_filter(sig: SampledSignal, f_lo: float, f_hi: float) -> SampledSignal:
    """Ideal rectangular band-pass on the DFT grid of ``sig``."""
    w = brick_response(len(sig), sig.sample_rate, f_lo, f_hi)
    if np.all(w == 1.0):
        return sig
    return _apply_response(sig, w)


def measure_power(sig: SampledSignal | np.ndarray) -> PowerReading:
    """Mean ``|a|^2`` in mW and dBm."""
    x = sig.samples if isinstance(sig, SampledSignal) else np.asarray(sig)
    if x.size == 0:
        raise ValueError("cannot measure power of an empty signal")
    mw = float(np.mean(np.abs(x) ** 2))
    dbm = 10 * np.log10(mw) if mw > 0 else -np.inf
    return PowerReading(mw, float(dbm))


def dual_power(sig: DualPolSignal) -> PowerReading:
    """Total power summed over both polarizations."""
    mw = measure_power(sig.pol_x).mw + measure_power(sig.pol_y).mw
    return PowerReading(mw, float(10 * np.log10(mw)) if mw > 0 else -np.inf)


def scale(sig: SampledSignal, factor: complex) -> SampledSignal:
    return sig.with_samples(sig.samples * factor)


def resample(sig: SampledSignal, new_rate: float) -> SampledSignal:
    """Exact band-limited resampling by spectral zero-padding or truncation.

    The length scales by ``new_rate / sample_rate``, which must give an
    integer sample count. Amplitude (hence power and energy) is preserved.
    When truncating, content outside the new Nyquist band is discarded.
    """
    n = len(sig)
    ratio = new_rate / sig.sample_rate
    m = int(round(n * ratio))
    if m < 1 or abs(m - n * ratio) > 1e-6:
        raise ValueError(f"resampling {sig.sample_rate:g} -> {new_rate:g} Sa/s gives a non-integer length")
    if m == n:
        return replace(sig, sample_rate=float(new_rate))
    X = sfft.fft(sig.samples)
    Y = np.zeros(m, dtype=np.complex128)
    k = min(n, m)
    # non-negative bins [0, k/2), negative bins [-k/2, 0); a shared Nyquist
    # bin is split evenly between +fs/2 and -fs/2
    pos = (k + 1) // 2
    neg = k // 2
    Y[:pos] = X[:pos]
    Y[m - neg:] = X[n - neg:]
    if k % 2 == 0:
        if n < m and n % 2 == 0:
            ny = X[n // 2]
            Y[m - neg] = ny / 2
            Y[neg] = ny / 2
        elif m < n and m % 2 == 0:
            Y[m - neg] = X[n - neg] + X[neg]
    return SampledSignal(sfft.ifft(Y) * (m / n), new_rate, sig.center_freq)

