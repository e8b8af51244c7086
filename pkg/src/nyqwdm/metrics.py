"""Signal-quality metrics: EVM, BER (estimated and counted), error-vector
Gaussianity, crosstalk penalty, spectra and rate accounting.

EVM is normalized to the outermost constellation point ("EVM_m") unless a
name says otherwise. The average-power figure is ``k * EVM_m``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO

import numpy as np
from scipy import fft as sfft
from scipy import signal as ssignal
from scipy import special, stats

from .channel import CarrierPlan
from .rx import decide
from .signal import SampledSignal, SpectrumView
from .tx import QAM16, ConstellationMap

#: Hard-decision threshold of second-generation FEC.
HD_FEC_THRESHOLD = 2.3e-3
#: Soft-decision FEC threshold.
SD_FEC_THRESHOLD = 1.8e-2


class AlignmentError(RuntimeError):
    """Received bits could not be aligned to the transmitted pattern."""


@dataclass(frozen=True, eq=False)
class EvmReport:
    """Max-normalized EVM of one carrier.

    Attributes
    ----------
    evm_m_rms : float
        Over all polarizations, ``sqrt(mean|e|^2) / max|s|``.
    per_pol : tuple of float
        Same figure per polarization.
    error_vectors : ndarray
        ``rx - ref``, shape ``(n_pol, n_symbols)``.
    n_symbols : int
        Symbols per polarization.
    decided_reference : bool
        True when the reference was obtained from hard decisions, which
        biases EVM low at high error rates.
    """

    evm_m_rms: float
    per_pol: tuple[float, ...]
    error_vectors: np.ndarray
    n_symbols: int
    k: float = math.sqrt(9 / 5)
    decided_reference: bool = False

    @property
    def evm_avg_rms(self) -> float:
        """Average-power normalized EVM, ``k * EVM_m``."""
        return self.k * self.evm_m_rms

    @property
    def evm_percent(self) -> float:
        return 100 * self.evm_m_rms


def evm_compute(
    rx: np.ndarray,
    ref: Optional[np.ndarray] = None,
    cmap: ConstellationMap = QAM16,
) -> EvmReport:
    """EVM of received symbols against a reference.

    Parameters
    ----------
    rx : array_like
        Received symbols, shape ``(n,)`` or ``(n_pol, n)``.
    ref : array_like, optional
        Known transmitted symbols of the same shape. When omitted the
        nearest constellation points are used and the report is flagged.
    cmap : ConstellationMap
        Supplies the normalizing maximum amplitude.
    """
    r = np.atleast_2d(np.asarray(rx, dtype=np.complex128))
    decided = ref is None
    if decided:
        s = decide(r, cmap)
    else:
        s = np.atleast_2d(np.asarray(ref, dtype=np.complex128))
        if s.shape != r.shape:
            raise ValueError(f"rx shape {r.shape} does not match reference shape {s.shape}")
    if r.shape[1] == 0:
        raise ValueError("no symbols to evaluate")
    e = r - s
    smax = cmap.max_amplitude
    per = tuple(float(math.sqrt(np.mean(np.abs(row) ** 2)) / smax) for row in e)
    total = float(math.sqrt(np.mean(np.abs(e) ** 2)) / smax)
    return EvmReport(total, per, e, r.shape[1], cmap.k, decided)


@dataclass(frozen=True)
class BerEstimate:
    """Gaussian-noise BER estimate from EVM_m."""

    ber: float
    evm_m: float
    L: int = 4
    M: int = 16
    k: float = math.sqrt(9 / 5)


def ber_from_evm(evm_m: float, L: int = 4, bits_per_symbol: int = 4, k: float = math.sqrt(9 / 5)) -> float:
    """BER of square QAM with ``L`` levels per rail from max-normalized EVM.

    ``(1 - 1/L) / log2 L * erfc(sqrt(3 log2 L / (L^2 - 1) / ((k EVM_m)^2 log2 M)))``
    """
    if not evm_m > 0:
        raise ValueError(f"evm_m must be positive, got {evm_m!r}")
    lb = math.log2(L)
    arg = 3 * lb / (L**2 - 1) / ((k * evm_m) ** 2 * bits_per_symbol)
    return float((1 - 1 / L) / lb * special.erfc(math.sqrt(arg)))


def ber_estimate(evm_m: float, cmap: ConstellationMap = QAM16) -> BerEstimate:
    L = cmap.levels
    return BerEstimate(ber_from_evm(evm_m, L, cmap.bits_per_symbol, cmap.k), evm_m, L, len(cmap.points), cmap.k)


class BerCount(NamedTuple):
    ber: float
    errors: int
    n_bits: int
    offset: int


def ber_count(tx_bits: np.ndarray, rx_bits: np.ndarray, align: bool = True, min_corr: float = 0.5) -> BerCount:
    """Counted BER, optionally after a cyclic alignment search.

    ``tx_bits`` is treated as one period of a periodic pattern; the cyclic
    shift that best matches ``rx_bits`` is found by FFT correlation unless
    the streams already agree at zero shift. An
    :class:`AlignmentError` is raised when the best normalized correlation
    is below ``min_corr`` (i.e. no plausible alignment exists).
    """
    t = np.asarray(tx_bits).astype(np.int8).reshape(-1)
    r = np.asarray(rx_bits).astype(np.int8).reshape(-1)
    if t.size != r.size:
        raise ValueError(f"bit streams differ in length ({t.size} vs {r.size})")
    if t.size == 0:
        raise ValueError("empty bit streams")
    offset = 0
    # an already aligned stream (correlation >= min_corr at lag 0) skips the search
    if align and 1 - 2 * np.count_nonzero(t != r) / t.size < min_corr:
        a = 1.0 - 2.0 * t
        b = 1.0 - 2.0 * r
        corr = sfft.irfft(np.conj(sfft.rfft(a)) * sfft.rfft(b), n=t.size) / t.size
        offset = int(np.argmax(corr))
        if corr[offset] < min_corr:
            raise AlignmentError(f"best correlation {corr[offset]:.3f} below {min_corr}")
        t = np.roll(t, offset)
    errors = int(np.count_nonzero(t != r))
    return BerCount(errors / t.size, errors, int(t.size), offset)


@dataclass(frozen=True)
class GaussianityReport:
    skewness: tuple[float, float]
    excess_kurtosis: tuple[float, float]
    chi2_pvalue: tuple[float, float]
    passed: bool

    def as_dict(self) -> dict:
        return {
            "skewness_I": self.skewness[0],
            "skewness_Q": self.skewness[1],
            "excess_kurtosis_I": self.excess_kurtosis[0],
            "excess_kurtosis_Q": self.excess_kurtosis[1],
            "chi2_pvalue_I": self.chi2_pvalue[0],
            "chi2_pvalue_Q": self.chi2_pvalue[1],
            "pass": self.passed,
        }


def _chi2_normal(x: np.ndarray, n_bins: int) -> float:
    sigma = math.sqrt(np.mean(x**2))
    edges = stats.norm.ppf(np.linspace(0, 1, n_bins + 1), scale=sigma)
    counts = np.histogram(x, np.concatenate([[-np.inf], edges[1:-1], [np.inf]]))[0]
    expected = np.full(n_bins, x.size / n_bins)
    return float(stats.chisquare(counts, expected, ddof=1).pvalue)


def gaussianity_test(
    error_vectors: np.ndarray,
    max_skew: float = 0.1,
    max_exkurt: float = 0.2,
    min_pvalue: float = 0.01,
    n_bins: int = 50,
) -> GaussianityReport:
    """Moment and chi-squared checks of I and Q against a zero-mean normal.

    The chi-squared test uses ``n_bins`` equiprobable bins of the fitted
    normal (one fitted parameter, the standard deviation).
    """
    e = np.asarray(error_vectors, dtype=np.complex128).reshape(-1)
    if e.size < 10_000:
        raise ValueError(f"need at least 1e4 error samples, got {e.size}")
    sk, ku, pv = [], [], []
    for x in (e.real, e.imag):
        sk.append(float(stats.skew(x)))
        ku.append(float(stats.kurtosis(x, fisher=True)))
        pv.append(_chi2_normal(x, n_bins))
    ok = all(abs(s) < max_skew for s in sk) and all(abs(k) < max_exkurt for k in ku) and all(p > min_pvalue for p in pv)
    return GaussianityReport(tuple(sk), tuple(ku), tuple(pv), bool(ok))


@dataclass(frozen=True)
class CrosstalkReport:
    """EVM of the center carrier with and without neighbors, in percent."""

    evm_with: float
    evm_without: float

    @property
    def penalty(self) -> float:
        """Absolute EVM increase in percentage points."""
        return self.evm_with - self.evm_without


def crosstalk_measure(with_neighbors: EvmReport, without_neighbors: EvmReport) -> CrosstalkReport:
    """Penalty from two runs that differ only in the presence of neighbors."""
    return CrosstalkReport(with_neighbors.evm_percent, without_neighbors.evm_percent)


def psd_estimate(sig: SampledSignal, resolution_bw: float) -> SpectrumView:
    """Two-sided Welch PSD (Hann, 50 % overlap) on a centered grid.

    The returned ``resolution_bw`` is the bin spacing ``fs / nperseg``;
    ``integrated_power()`` then approximates the mean signal power.
    """
    fs = sig.sample_rate
    if not resolution_bw > 0:
        raise ValueError("resolution_bw must be positive")
    nperseg = int(round(fs / resolution_bw))
    if nperseg < 2 or 4 * nperseg > len(sig):
        raise ValueError(
            f"resolution {resolution_bw:g} Hz needs >= 4 segments of {nperseg} samples, signal has {len(sig)}"
        )
    f, p = ssignal.welch(
        sig.samples, fs=fs, window="hann", nperseg=nperseg, detrend=False, return_onesided=False, scaling="density"
    )
    return SpectrumView(sfft.fftshift(f), sfft.fftshift(p), fs / nperseg, sig.center_freq)


@dataclass(frozen=True)
class RateSummary:
    n_carriers: int
    symbol_rate: float
    bits_per_symbol: int
    n_pols: int
    fec_overhead: float
    line_rate: float
    occupied_bw: float

    @property
    def net_rate(self) -> float:
        return self.line_rate / (1 + self.fec_overhead)

    @property
    def net_spectral_efficiency(self) -> float:
        return self.net_rate / self.occupied_bw


def occupied_bandwidth(plan: CarrierPlan) -> float:
    """Sum of per-carrier allocations.

    Each carrier owns half the gap to each neighbor; outer carriers own half
    their own symbol rate on the open side.
    """
    cs = plan.carriers
    total = 0.0
    for i, c in enumerate(cs):
        lo = (c.freq_offset - cs[i - 1].freq_offset) / 2 if i > 0 else c.symbol_rate / 2
        hi = (cs[i + 1].freq_offset - c.freq_offset) / 2 if i + 1 < len(cs) else c.symbol_rate / 2
        total += lo + hi
    return total


def rate_summary(plan: CarrierPlan, bits_per_symbol: int = 4, n_pols: int = 2, fec_overhead: float = 0.25) -> RateSummary:
    if fec_overhead < 0:
        raise ValueError("fec_overhead must be >= 0")
    rates = [c.symbol_rate for c in plan.carriers]
    line = sum(rates) * bits_per_symbol * n_pols
    mean_rate = sum(rates) / len(rates)
    return RateSummary(len(rates), mean_rate, bits_per_symbol, n_pols, fec_overhead, line, occupied_bandwidth(plan))


def fec_flags(ber: float) -> dict:
    """Whether ``ber`` is below each FEC threshold."""
    return {"hd_fec_ok": ber < HD_FEC_THRESHOLD, "sd_fec_ok": ber < SD_FEC_THRESHOLD}


# -- CSV export ------------------------------------------------------------------

RESULT_COLUMNS = (
    "carrier_index",
    "freq_offset_hz",
    "wavelength_nm",
    "pol",
    "evm_percent",
    "ber_est",
    "ber_counted",
    "n_symbols",
    "gauss_pass",
)


def fmt(v) -> str:
    """Portable CSV formatting: floats to 12 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".12g")  # +0.0 folds -0.0
    return str(v)


@dataclass(frozen=True)
class ResultRow:
    carrier_index: int
    freq_offset_hz: float
    wavelength_nm: float
    pol: str
    evm_percent: float
    ber_est: float
    ber_counted: float
    n_symbols: int
    gauss_pass: bool

    def cells(self) -> list[str]:
        return [fmt(getattr(self, c)) for c in RESULT_COLUMNS]


def write_results_csv(fh: TextIO, rows: Iterable[ResultRow]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.cells())


def write_points_csv(fh: TextIO, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    """Column arrays as a CSV point list (constellations, spectra)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([fmt(v) for v in row])


def write_constellation_csv(fh: TextIO, symbols: np.ndarray) -> None:
    s = np.asarray(symbols).reshape(-1)
    write_points_csv(fh, ("i", "q"), (s.real, s.imag))


def write_spectrum_csv(fh: TextIO, view: SpectrumView) -> None:
    write_points_csv(fh, ("freq_hz", "psd_db"), (view.bin_freqs, view.psd_db))
