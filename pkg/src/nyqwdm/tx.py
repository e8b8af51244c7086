"""Software-defined Nyquist transmitter: PRBS, 16QAM mapping, sinc FIR, DAC."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import fft as sfft
from scipy import optimize
from scipy import signal as ssig

from .signal import SampledSignal

# Fibonacci LFSR feedback taps (ITU-T O.150 style polynomials x^a + x^b + 1).
PRBS_TAPS = {7: (7, 6), 9: (9, 5), 11: (11, 9), 15: (15, 14), 20: (20, 3), 23: (23, 18), 31: (31, 28)}
DEFAULT_PRBS_SEED = 0x4001

# per-rail Gray code: two bits -> amplitude level
_GRAY_LEVELS = {0b00: -3, 0b01: -1, 0b11: 1, 0b10: 3}


@dataclass(frozen=True, eq=False)
class ConstellationMap:
    """Square QAM point set indexed by bit label.

    ``points[label]`` is the complex point carrying the ``bits_per_symbol``
    bit word ``label`` (first bit is the most significant).
    """

    name: str
    points: np.ndarray
    levels: int

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.complex128).copy()
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if p.size != self.levels**2:
            raise ValueError("square QAM needs levels**2 points")

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.points.size)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.points.size))

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def max_amplitude(self) -> float:
        return float(np.max(np.abs(self.points)))

    @property
    def k(self) -> float:
        """Modulation factor, ``k**2 = P_max / P_avg``."""
        return float(np.sqrt(self.max_amplitude**2 / self.mean_power))


def qam16_gray() -> ConstellationMap:
    """Default 16QAM map: bits b0 b1 pick the I level, b2 b3 the Q level."""
    pts = np.empty(16, dtype=np.complex128)
    for label in range(16):
        i_lvl = _GRAY_LEVELS[label >> 2]
        q_lvl = _GRAY_LEVELS[label & 0b11]
        pts[label] = (i_lvl + 1j * q_lvl) / np.sqrt(10)
    return ConstellationMap("16QAM", pts, levels=4)


QAM16 = qam16_gray()


@dataclass(frozen=True)
class ShaperConfig:
    n_taps: int = 64
    samples_per_symbol: int = 2
    symbol_rate: float = 12.5e9
    window: str = "rect"

    def __post_init__(self):
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if self.n_taps % 2 or self.n_taps < 2 * self.samples_per_symbol:
            raise ValueError("n_taps must be even and >= 2 * samples_per_symbol")
        if self.window not in ("rect", "raised_cosine"):
            raise ValueError(f"unknown window {self.window!r}")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be positive")

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol

    @property
    def center_index(self) -> int:
        return self.n_taps // 2 - 1


@dataclass(frozen=True)
class DacConfig:
    """DAC and analog anti-alias filter.

    ``quant_bits=None`` means ideal (unquantized). With ``aa_filter`` on, the
    output is emitted on an analog emulation grid ``analog_oversample`` times
    faster than the DAC clock so the filter mask above fs/2 is representable.
    """

    sample_rate: float = 25e9
    quant_bits: Optional[int] = None
    aa_filter: bool = True
    aa_f3db: float = 12e9
    aa_stop_freq: float = 13e9
    aa_stop_atten: float = 30.0
    analog_oversample: int = 4

    def __post_init__(self):
        if self.quant_bits is not None and self.quant_bits < 4:
            raise ValueError("quant_bits below 4 is not supported")
        if self.analog_oversample < 1:
            raise ValueError("analog_oversample must be >= 1")
        if self.aa_filter and not (0 < self.aa_f3db < self.aa_stop_freq < self.analog_rate / 2):
            raise ValueError("anti-alias mask must satisfy 0 < f3db < stop < analog_rate / 2")

    @property
    def analog_rate(self) -> float:
        return self.sample_rate * self.analog_oversample

    @property
    def output_rate(self) -> float:
        return self.analog_rate if self.aa_filter else self.sample_rate


SIX_BIT_DAC = DacConfig(quant_bits=6)
IDEAL_DAC = DacConfig(aa_filter=False)


@functools.lru_cache(maxsize=32)
def _prbs_period(degree: int, seed: int) -> np.ndarray:
    a, b = PRBS_TAPS[degree]
    mask = (1 << degree) - 1
    state = seed & mask
    n = mask
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        fb = ((state >> (a - 1)) ^ (state >> (b - 1))) & 1
        state = ((state << 1) | fb) & mask
        out[i] = fb
    out.setflags(write=False)
    return out


def prbs_generate(n_bits: int, degree: int = 15, seed: int = DEFAULT_PRBS_SEED) -> np.ndarray:
    """Maximal-length LFSR bit sequence (period ``2**degree - 1``)."""
    if degree not in PRBS_TAPS:
        raise ValueError(f"unsupported PRBS degree {degree}")
    if seed & ((1 << degree) - 1) == 0:
        raise ValueError("PRBS seed must be nonzero")
    if n_bits < 0:
        raise ValueError("n_bits must be non-negative")
    period = _prbs_period(degree, seed)
    reps = -(-n_bits // period.size)
    return np.tile(period, max(reps, 1))[:n_bits].copy()


def qam16_map(bits: np.ndarray, cmap: ConstellationMap = QAM16) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    bps = cmap.bits_per_symbol
    if bits.size % bps:
        raise ValueError(f"bit count {bits.size} not divisible by {bps}")
    words = bits.reshape(-1, bps) @ (1 << np.arange(bps - 1, -1, -1))
    return cmap.points[words]


def nyquist_fir_design(cfg: ShaperConfig) -> np.ndarray:
    """Truncated (optionally tapered) sinc taps with unit peak.

    Taps sit on ``n - n_center`` sample offsets, ``n_center = n_taps/2 - 1``.
    Taps at nonzero whole-symbol offsets are exactly zero.
    """
    sps = cfg.samples_per_symbol
    offs = np.arange(cfg.n_taps) - cfg.center_index
    h = np.sinc(offs / sps)
    h[(offs % sps == 0) & (offs != 0)] = 0.0
    h[offs == 0] = 1.0
    if cfg.window == "raised_cosine":
        half = cfg.n_taps // 2 + 1
        h = h * 0.5 * (1 + np.cos(np.pi * offs / half))
    return h


def pulse_shape(symbols: np.ndarray, cfg: ShaperConfig = ShaperConfig()) -> SampledSignal:
    """Zero-stuff by ``samples_per_symbol`` and circularly convolve with the taps.

    The output is aligned so that sample ``m * sps`` is the center of
    symbol ``m``.
    """
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    if symbols.size == 0:
        raise ValueError("no symbols to shape")
    sps = cfg.samples_per_symbol
    n = symbols.size * sps
    up = np.zeros(n, dtype=np.complex128)
    up[::sps] = symbols
    h = nyquist_fir_design(cfg)
    kernel = np.zeros(n, dtype=np.float64)
    np.add.at(kernel, (np.arange(cfg.n_taps) - cfg.center_index) % n, h)
    y = sfft.ifft(sfft.fft(up) * sfft.fft(kernel))
    return SampledSignal(y, cfg.sample_rate)


@functools.lru_cache(maxsize=16)
def antialias_taps(cfg: DacConfig) -> np.ndarray:
    """Linear-phase Kaiser FIR meeting the anti-alias mask at ``analog_rate``.

    The cutoff is tuned so the response is exactly -3 dB at ``aa_f3db``.
    """
    fs = cfg.analog_rate
    atten = max(cfg.aa_stop_atten + 30.0, 60.0)
    width = 1.6 * (cfg.aa_stop_freq - cfg.aa_f3db)
    numtaps, beta = ssig.kaiserord(atten, width / (fs / 2))
    numtaps |= 1

    def design(fc):
        return ssig.firwin(numtaps, fc, window=("kaiser", beta), fs=fs)

    def gain_at(taps, f):
        _, h = ssig.freqz(taps, worN=[f], fs=fs)
        return abs(h[0])

    fc = optimize.brentq(
        lambda fc: gain_at(design(fc), cfg.aa_f3db) - np.sqrt(0.5),
        cfg.aa_f3db,
        cfg.aa_stop_freq,
        xtol=1e-3,
    )
    taps = design(fc)
    if 20 * np.log10(gain_at(taps, cfg.aa_stop_freq)) > -cfg.aa_stop_atten:
        raise ValueError("anti-alias mask not realizable with the chosen design")
    taps.setflags(write=False)
    return taps


def antialias_response(cfg: DacConfig, freqs: np.ndarray) -> np.ndarray:
    """Zero-phase amplitude response of the anti-alias filter at ``freqs``."""
    taps = antialias_taps(cfg)
    offs = np.arange(taps.size) - (taps.size - 1) // 2
    return np.real(np.exp(-2j * np.pi * np.outer(np.asarray(freqs) / cfg.analog_rate, offs)) @ taps)


def quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Mid-rise uniform quantizer on I and Q over the signal's +-max range."""
    full = max(np.max(np.abs(x.real)), np.max(np.abs(x.imag)))
    if full == 0:
        return x.copy()
    step = 2 * full / 2**bits

    def q(r):
        idx = np.clip(np.floor((r + full) / step), 0, 2**bits - 1)
        return -full + (idx + 0.5) * step

    return q(x.real) + 1j * q(x.imag)


def dac_model(sig: SampledSignal, cfg: DacConfig = DacConfig()) -> SampledSignal:
    """Quantize, convert (impulse DAC with images) and anti-alias filter.

    The filter is applied zero-phase, so the model adds no delay.
    """
    if not np.isclose(sig.sample_rate, cfg.sample_rate, rtol=1e-12):
        raise ValueError(f"signal rate {sig.sample_rate:g} != DAC rate {cfg.sample_rate:g}")
    x = sig.samples
    if cfg.quant_bits is not None:
        x = quantize(x, cfg.quant_bits)
    if not cfg.aa_filter:
        return sig.with_samples(x)
    os_ = cfg.analog_oversample
    up = np.zeros(x.size * os_, dtype=np.complex128)
    up[::os_] = x * os_
    taps = antialias_taps(cfg)
    # DTFT of the centered taps evaluated on the DFT grid
    offs = np.arange(taps.size) - (taps.size - 1) // 2
    kernel = np.zeros(up.size)
    np.add.at(kernel, offs % up.size, taps)
    H = np.real(sfft.fft(kernel))
    return SampledSignal(sfft.ifft(sfft.fft(up) * H), cfg.analog_rate, sig.center_freq)


def normalize_power(sig: SampledSignal, target_mw: float = 1.0) -> SampledSignal:
    p = np.mean(np.abs(sig.samples) ** 2)
    if p == 0:
        return sig
    return sig.with_samples(sig.samples * np.sqrt(target_mw / p))


def tx_channel(
    bits: np.ndarray,
    cmap: ConstellationMap = QAM16,
    shaper: ShaperConfig = ShaperConfig(),
    dac: DacConfig = IDEAL_DAC,
) -> SampledSignal:
    """Bits to unit-average-power shaped waveform."""
    shaped = pulse_shape(qam16_map(bits, cmap), shaper)
    return normalize_power(dac_model(shaped, dac))


def occupied_bandwidth(sig: SampledSignal, fraction: float = 0.99) -> float:
    """Width of the centered band holding ``fraction`` of the power [Hz]."""
    X = np.abs(sfft.fftshift(sfft.fft(sig.samples))) ** 2
    f = sfft.fftshift(sfft.fftfreq(len(sig), 1 / sig.sample_rate))
    order = np.argsort(np.abs(f), kind="stable")
    cum = np.cumsum(X[order]) / X.sum()
    idx = np.searchsorted(cum, fraction)
    return 2 * abs(f[order][min(idx, f.size - 1)])


def write_taps_csv(path, taps: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(taps):
            fh.write(f"{i},{float(v):.17g}\n")

