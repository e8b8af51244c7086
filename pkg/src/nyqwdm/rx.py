"""Coherent Nyquist WDM receiver DSP chain.

Processing order used by the harness: WSS group selection, downconversion,
CD compensation, coarse/fine frequency-offset removal, brick-wall channel
selection, clock/frame recovery, 2x2 butterfly equalization, carrier phase
recovery and hard decisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import optimize

from . import _kernels
from .channel import FiberSpec, apply_cd
from .signal import (
    DualPolSignal,
    SampledSignal,
    brick_filter,
    fft_freqs,
    frequency_shift,
    resample,
    spectral_delay,
)
from .tx import QAM16, ConstellationMap


class SyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class RxConfig:
    wss_bandwidth: float = 60e9
    eq_taps: int = 51
    eq_step: float = 1e-3
    dd_step: float = 1e-4
    pll_gain: float = 0.02
    train_epochs: int = 30
    eq_init: str = "ls"
    cd_params: Optional[FiberSpec] = None
    lo_offset: float = 0.0
    lo_linewidth: float = 0.0
    cpr_gain: float = 0.2
    fo_mode: str = "blind"
    clock_mode: str = "data-aided"

    def __post_init__(self):
        if self.eq_taps < 1 or self.eq_taps % 2 == 0:
            raise ValueError("eq_taps must be a positive odd number")
        if min(self.eq_step, self.dd_step, self.pll_gain) < 0:
            raise ValueError("equalizer step sizes and loop gain must be >= 0")
        if self.fo_mode not in ("off", "blind", "data-aided"):
            raise ValueError(f"unknown fo_mode {self.fo_mode!r}")
        if self.eq_init not in ("ls", "spike"):
            raise ValueError(f"unknown eq_init {self.eq_init!r}")
        if self.clock_mode not in ("data-aided", "blind"):
            raise ValueError(f"unknown clock_mode {self.clock_mode!r}")


@dataclass
class SyncReport:
    freq_offset_est: float = 0.0
    timing_phase_est: float = 0.0
    frame_offset: int = 0
    pol_matrix_est: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    converged: bool = True
    cycle_slip: bool = False

    def as_dict(self) -> dict:
        m = np.asarray(self.pol_matrix_est)
        return {
            "freq_offset_est_hz": float(self.freq_offset_est),
            "timing_phase_est": float(self.timing_phase_est),
            "frame_offset": int(self.frame_offset),
            "pol_matrix_est": [[[float(v.real), float(v.imag)] for v in row] for row in m],
            "converged": bool(self.converged),
            "cycle_slip": bool(self.cycle_slip),
        }


# -- optical front end ------------------------------------------------------


def wss_select(sig: DualPolSignal, center: float, bw: float) -> DualPolSignal:
    """Select ``center +- bw/2`` and move it to baseband.

    The selected group's absolute position is carried into ``center_freq``.
    """
    fs = sig.sample_rate
    lo, hi = center - bw / 2, center + bw / 2
    if lo < -fs / 2 - 1e-6 or hi > fs / 2 + 1e-6:
        raise ValueError(f"WSS band ({lo:g}, {hi:g}) Hz outside the grid")
    lo, hi = max(lo, -fs / 2), min(hi, fs / 2)

    def one(s: SampledSignal) -> SampledSignal:
        y = brick_filter(s, lo, hi)
        if center:
            y = frequency_shift(y, -center)
        return SampledSignal(y.samples, fs, s.center_freq + center)

    return sig.apply(one)


def phase_noise_track(n: int, linewidth: float, sample_rate: float, rng_seed=None) -> np.ndarray:
    """Wiener phase process with increment variance ``2 pi linewidth / fs``."""
    if linewidth <= 0:
        return np.zeros(n)
    rng = np.random.default_rng(rng_seed)
    steps = rng.standard_normal(n) * math.sqrt(2 * np.pi * linewidth / sample_rate)
    return np.cumsum(steps)


def downconvert(sig: DualPolSignal, lo_freq: float, lo_linewidth: float = 0.0, rng_seed=None) -> DualPolSignal:
    """Mix with the local oscillator at ``lo_freq`` (relative to baseband)."""
    out = sig.apply(lambda s: frequency_shift(s, -lo_freq)) if lo_freq else sig
    if lo_linewidth > 0:
        rot = np.exp(1j * phase_noise_track(len(sig), lo_linewidth, sig.sample_rate, rng_seed))
        out = DualPolSignal.from_arrays(
            out.pol_x.samples * rot, out.pol_y.samples * rot, sig.sample_rate, sig.center_freq
        )
    return out


def _total_fiber(fiber) -> FiberSpec:
    if isinstance(fiber, FiberSpec):
        return fiber
    spans = list(fiber)
    if not spans:
        return FiberSpec(0.0)
    lengths = sum(f.length for f in spans)
    f0 = spans[0]
    # length-weighted dispersion so mixed spans accumulate correctly
    d = sum(f.dispersion * f.length for f in spans) / lengths if lengths else f0.dispersion
    s = sum(f.dispersion_slope * f.length for f in spans) / lengths if lengths else f0.dispersion_slope
    return FiberSpec(lengths, d, s, f0.attenuation, f0.ref_wavelength)


def cd_compensate(sig: DualPolSignal, fiber_totals) -> DualPolSignal:
    """Exact inverse of the fiber CD all-pass (span loss is not undone).

    ``fiber_totals`` is a FiberSpec for the whole link or a sequence of
    per-span FiberSpecs.
    """
    fiber = _total_fiber(fiber_totals)
    if fiber.length == 0:
        return sig
    return apply_cd(sig, fiber, inverse=True)


def channel_select(sig: DualPolSignal, carrier_offset: float, symbol_rate: float) -> DualPolSignal:
    """Recenter on one carrier, brick-wall to (-R/2, R/2), resample to 2 sps."""

    def one(s: SampledSignal) -> SampledSignal:
        y = frequency_shift(s, -carrier_offset) if carrier_offset else s
        y = brick_filter(y, -symbol_rate / 2, symbol_rate / 2)
        y = resample(y, 2 * symbol_rate)
        return SampledSignal(y.samples, y.sample_rate, s.center_freq + carrier_offset)

    return sig.apply(one)


# -- synchronization ----------------------------------------------------------


class FrequencyRecovery(NamedTuple):
    signal: DualPolSignal
    offset: float
    converged: bool


def _tone_freq(z: np.ndarray, rate: float) -> tuple[float, float]:
    """Frequency [Hz] and strength of the strongest tone summed over rows."""
    z = np.atleast_2d(z)
    n = z.shape[1]
    nfft = 4 * sfft.next_fast_len(n)
    P = np.sum(np.abs(sfft.fft(z, nfft, axis=1)) ** 2, axis=0)
    k = int(np.argmax(P))
    f0 = sfft.fftfreq(nfft)[k]
    m = np.arange(n)

    def neg_power(f):
        return -float(np.sum(np.abs(z @ np.exp(-2j * np.pi * f * m)) ** 2))

    res = optimize.minimize_scalar(
        neg_power, bounds=(f0 - 1.0 / nfft, f0 + 1.0 / nfft), method="bounded", options={"xatol": 1e-12}
    )
    return res.x * rate, -res.fun


def _symbol_phases(sig: DualPolSignal, symbol_rate: float) -> list[np.ndarray]:
    sps = sig.sample_rate / symbol_rate
    k = int(round(sps))
    if k < 1 or abs(sps - k) > 1e-9:
        raise ValueError("signal rate must be an integer multiple of the symbol rate")
    x = sig.as_array()
    return [x[:, p::k] for p in range(k)]


def _fine_offset(sig: DualPolSignal, symbol_rate: float, preamble) -> float:
    best = (0.0, -1.0)
    for xs in _symbol_phases(sig, symbol_rate):
        if preamble is None:
            f, p = _tone_freq(xs**4, symbol_rate)
            f /= 4
        else:
            # every received row against every preamble row: rotation independent
            n = min(preamble.shape[1], xs.shape[1])
            z = (xs[:, None, :n] * np.conj(preamble[None, :, :n])).reshape(-1, n)
            f, p = _tone_freq(z, symbol_rate)
        if p > best[1]:
            best = (f, p)
    return best[0]


def spectral_centroid(sig: DualPolSignal, half_width: float) -> float:
    """Power-weighted mean frequency within ``+-half_width``."""
    f = fft_freqs(len(sig), sig.sample_rate)
    P = np.sum(np.abs(sfft.fft(sig.as_array(), axis=1)) ** 2, axis=0)
    sel = np.abs(f) <= half_width
    tot = P[sel].sum()
    return float(np.sum(f[sel] * P[sel]) / tot) if tot > 0 else 0.0


def freq_offset_recover(
    sig: DualPolSignal,
    symbol_rate: float,
    known_preamble: Optional[np.ndarray] = None,
    max_offset: float = 500e6,
    tolerance: float = 1e6,
) -> FrequencyRecovery:
    """Estimate and remove the carrier frequency offset.

    Coarse stage: spectral centroid of the channel band. Fine stage: tone
    search on ``x**4`` at symbol spacing (``known_preamble=None``, blind) or
    on ``x * conj(preamble)`` (data-aided, preamble aligned to sample 0).
    ``converged`` is false when a second fine pass still sees more than
    ``tolerance`` Hz.
    """
    half = symbol_rate / 2 + max_offset + 0.1 * symbol_rate
    half = min(half, sig.sample_rate / 2)
    coarse = spectral_centroid(sig, half)
    out = sig.apply(lambda s: frequency_shift(s, -coarse)) if coarse else sig
    pre = None if known_preamble is None else np.atleast_2d(np.asarray(known_preamble, dtype=np.complex128))
    fine = _fine_offset(out, symbol_rate, pre)
    out = out.apply(lambda s: frequency_shift(s, -fine))
    residual = _fine_offset(out, symbol_rate, pre)
    return FrequencyRecovery(out, coarse + fine, abs(residual) <= tolerance)


class ClockRecovery(NamedTuple):
    signal: DualPolSignal
    timing_phase: float
    frame_offset: int
    ambiguous: bool


def _upsample2(symbols: np.ndarray, n: int) -> np.ndarray:
    u = np.zeros(n, dtype=np.complex128)
    m = min(symbols.size, n // 2)
    u[: 2 * m : 2] = symbols[:m]
    return u


def clock_recover(
    sig: DualPolSignal,
    ref_symbols: Optional[np.ndarray] = None,
    mode: str = "data-aided",
    pol_delay: Optional[float] = None,
) -> ClockRecovery:
    """Recover symbol timing of a 2 samples/symbol signal.

    Data-aided: the delay (in samples) maximizing the band-limited
    cross-correlation with the zero-stuffed reference, summed over both
    polarizations. The integer part in symbols is returned as
    ``frame_offset`` and the remainder in [-0.5, 0.5) as ``timing_phase``;
    the output is advanced by the full delay so sample ``2m`` carries
    ``ref_symbols[m]``. When ``pol_delay`` (symbols, may be fractional) is
    given, the second tributary is taken to carry the same reference
    delayed by that amount and both tributaries contribute to the metric,
    which makes the estimate independent of the polarization rotation.
    Blind: minimizes the normalized variance of the dual-polarization symbol
    power at the decision instants over a +-0.5 symbol range, which holds for
    any carrier phase and polarization state (no frame recovery).
    """
    n = len(sig)
    if n % 2:
        raise ValueError("clock recovery expects 2 samples/symbol (even length)")
    x = sig.as_array()
    if not np.any(x):
        return ClockRecovery(sig, 0.0, 0, True)
    kf = sfft.fftfreq(n) * n  # signed bin index

    if mode == "data-aided":
        if ref_symbols is None:
            raise ValueError("data-aided clock recovery needs reference symbols")
        U = sfft.fft(_upsample2(np.asarray(ref_symbols, dtype=complex), n))
        refs = [U] if pol_delay is None else [U, U * np.exp(-2j * np.pi * kf * 2 * pol_delay / n)]
        X = sfft.fft(x, axis=1)
        P = np.concatenate([X * np.conj(u) for u in refs])
        corr = np.sum(np.abs(sfft.ifft(P, axis=1)) ** 2, axis=0)
        lag = int(np.argmax(corr))
        if lag > n // 2:
            lag -= n
        if corr.max() <= 10 * np.median(corr):
            return ClockRecovery(sig, 0.0, 0, True)

        def neg_metric(d):
            ph = np.exp(2j * np.pi * kf * d / n)
            return -float(np.sum(np.abs(P @ ph) ** 2))

        res = optimize.minimize_scalar(neg_metric, bounds=(lag - 1.0, lag + 1.0), method="bounded", options={"xatol": 1e-7})
        delay = res.x
    elif mode == "blind":
        delay = 2 * _blind_timing(x)
    else:
        raise ValueError(f"unknown clock recovery mode {mode!r}")

    d_sym = delay / 2
    frame = int(np.floor(d_sym + 0.5))
    phase = d_sym - frame
    out = sig.apply(lambda s: spectral_delay(s, -delay / s.sample_rate))
    return ClockRecovery(out, float(phase), frame, False)


def _blind_timing(x: np.ndarray, cmap: ConstellationMap = QAM16) -> float:
    n = x.shape[1]
    X = sfft.fft(x, axis=1)
    kf = sfft.fftfreq(n) * n

    # dispersion of the dual-pol symbol power: blind to phase and Jones rotation
    def cost(t):
        y = sfft.ifft(X * np.exp(2j * np.pi * kf * 2 * t / n), axis=1)[:, ::2]
        p = np.sum(np.abs(y) ** 2, axis=0)
        return float(np.mean(p**2) / np.mean(p) ** 2)

    grid = np.linspace(-0.5, 0.5, 33)
    t0 = grid[int(np.argmin([cost(t) for t in grid]))]
    res = optimize.minimize_scalar(cost, bounds=(max(t0 - 1 / 32, -0.5), min(t0 + 1 / 32, 0.5)), method="bounded")
    return float(res.x)


# -- equalization and decisions ------------------------------------------------


class EqualizerResult(NamedTuple):
    symbols: np.ndarray  # (2, N)
    taps: np.ndarray  # (2, 2, T), referred to the unnormalized input
    mse: np.ndarray  # per-symbol squared error of the final pass
    converged: bool
    diverged: bool

    @property
    def pol_matrix(self) -> np.ndarray:
        """Zero-frequency response of the butterfly."""
        return self.taps.sum(axis=2)


def pol_demux_equalize(
    sig: DualPolSignal,
    cfg: RxConfig = RxConfig(),
    training: Sequence[np.ndarray] = (),
    n_train: Optional[int] = None,
    cmap: ConstellationMap = QAM16,
) -> EqualizerResult:
    """2x2 butterfly LMS equalizer, training-aided start then decision-directed.

    ``training`` holds the known symbol streams of both output tributaries,
    aligned to the input (sample ``2m`` <-> symbol ``m``). The first
    ``n_train`` symbols (default 1 %, at least ``8 * eq_taps``) seed the
    taps with a least-squares fit (``eq_init="ls"``) and are then used for
    ``cfg.train_epochs`` LMS training passes at ``eq_step``. The final pass
    adapts on decisions at ``dd_step`` beyond the training block, with a
    per-output first-order phase loop of gain ``pll_gain`` inside the
    update. The outputs are rescaled by the least-squares gain on the
    training block, removing the shrinkage of the MMSE solution.
    """
    n = len(sig)
    if n % 2:
        raise ValueError("equalizer expects 2 samples/symbol")
    n_sym = n // 2
    x = sig.as_array()
    rms = math.sqrt(np.mean(np.abs(x) ** 2))
    if rms == 0:
        raise SyncError("equalizer input is all zeros")
    x = x / rms
    ref = np.zeros((2, n_sym), dtype=np.complex128)
    if len(training):
        for o in range(2):
            t = np.asarray(training[o], dtype=np.complex128)
            ref[o, : min(t.size, n_sym)] = t[:n_sym]
    if n_train is None:
        n_train = max(int(round(0.01 * n_sym)), 8 * cfg.eq_taps) if len(training) else 0
    n_train = min(n_train, n_sym)
    T = cfg.eq_taps
    w = np.zeros((2, 2, T), dtype=np.complex128)
    w[0, 0, T // 2] = 1.0
    w[1, 1, T // 2] = 1.0
    if n_train and cfg.eq_init == "ls":
        w = _ls_taps(x, ref[:, :n_train], T)
    out = np.zeros((2, n_sym), dtype=np.complex128)
    err = np.zeros(n_sym)
    pts = np.ascontiguousarray(cmap.points)
    pll = cfg.pll_gain
    if n_train:
        for _ in range(cfg.train_epochs):
            _kernels.butterfly_lms(x, ref, n_train, w, cfg.eq_step, pts, 0, n_train, out, err, pll)
        _kernels.butterfly_lms(x, ref, n_train, w, cfg.eq_step, pts, 0, n_train, out, err, pll)
    _kernels.butterfly_lms(x, ref, n_train, w, cfg.dd_step, pts, n_train, n_sym, out, err, pll)
    if n_train:
        # remove the MMSE shrinkage so decisions see unit-gain symbols
        for o in range(2):
            r = ref[o, :n_train]
            out[o] *= np.vdot(r, r).real / np.vdot(r, out[o, :n_train])
    converged, diverged = _convergence(err)
    return EqualizerResult(out, w / rms, err, converged, diverged)


def _ls_taps(x: np.ndarray, ref: np.ndarray, T: int, ridge: float = 1e-6) -> np.ndarray:
    """Least-squares butterfly taps fitted on the training block."""
    n = x.shape[1]
    n_tr = ref.shape[1]
    c = T // 2
    idx = (2 * np.arange(n_tr)[:, None] - c + np.arange(T)[None, :]) % n
    A = np.concatenate([x[0][idx], x[1][idx]], axis=1)
    G = A.conj().T @ A
    G += ridge * np.trace(G).real / G.shape[0] * np.eye(G.shape[0])
    w = np.empty((2, 2, T), dtype=np.complex128)
    for o in range(2):
        sol = np.linalg.solve(G, A.conj().T @ ref[o])
        w[o, 0], w[o, 1] = sol[:T], sol[T:]
    return w


def _convergence(err: np.ndarray, block: int = 1000) -> tuple[bool, bool]:
    if not np.all(np.isfinite(err)):
        return False, True
    nb = err.size // block
    if nb < 2:
        m = float(np.mean(err))
        return m < 0.5, False
    blocks = err[: nb * block].reshape(nb, block).mean(axis=1)
    tail = blocks[nb // 2 :]
    diverged = bool(tail[-1] > 4 * blocks.min() + 1e-3 and tail[-1] > 0.1)
    converged = bool(not diverged and tail.max() <= 1.5 * tail.mean() + 1e-6 and tail.mean() < 0.5)
    return converged, diverged


def decide(symbols: np.ndarray, cmap: ConstellationMap = QAM16) -> np.ndarray:
    """Nearest constellation point."""
    return cmap.points[nearest_label(symbols, cmap)]


def nearest_label(symbols: np.ndarray, cmap: ConstellationMap = QAM16) -> np.ndarray:
    s = np.asarray(symbols)
    flat = s.reshape(-1)
    out = np.empty(flat.size, dtype=np.int64)
    chunk = 1 << 18
    for i in range(0, flat.size, chunk):
        d = np.abs(flat[i : i + chunk, None] - cmap.points[None, :])
        out[i : i + chunk] = np.argmin(d, axis=1)
    return out.reshape(s.shape)


class PhaseRecovery(NamedTuple):
    symbols: np.ndarray
    phase: np.ndarray
    cycle_slip: bool


def _fourth_power_phase(y: np.ndarray) -> float:
    # square QAM: E[s^4] is a negative real number
    return float(np.angle(-np.sum(y**4)) / 4)


def carrier_phase_recover(
    symbols: np.ndarray,
    cmap: ConstellationMap = QAM16,
    gain: float = 0.2,
    init_block: int = 256,
    slip_block: int = 512,
) -> PhaseRecovery:
    """Decision-directed first-order phase tracking loop.

    The loop starts from a 4th-power estimate over the first ``init_block``
    symbols, refined by two decision-directed averages. A cycle slip is
    flagged when a block-wise 4th-power estimate and the loop phase disagree
    by more than pi/4 (modulo pi/2 ambiguity is unwrapped across blocks).
    """
    y = np.ascontiguousarray(np.asarray(symbols, dtype=np.complex128).reshape(-1))
    if y.size == 0:
        return PhaseRecovery(y.copy(), np.zeros(0), False)
    head = y[:init_block]
    theta = _fourth_power_phase(head)
    for _ in range(2):
        z = head * np.exp(-1j * theta)
        theta += float(np.angle(np.sum(z * np.conj(decide(z, cmap)))))
    out = np.empty_like(y)
    track = np.empty(y.size)
    _kernels.dd_phase_loop(y, np.ascontiguousarray(cmap.points), theta, gain, out, track)
    return PhaseRecovery(out, track, _cycle_slip(y, track, slip_block))


def _cycle_slip(y: np.ndarray, track: np.ndarray, block: int) -> bool:
    nb = y.size // block
    if nb < 2:
        return False
    est = np.array([_fourth_power_phase(y[i * block : (i + 1) * block]) for i in range(nb)])
    est = np.unwrap(est * 4) / 4
    est += (np.pi / 2) * np.round((track[block // 2] - est[0]) / (np.pi / 2))
    loop = track[: nb * block].reshape(nb, block).mean(axis=1)
    return bool(np.any(np.abs(loop - est) > np.pi / 4))


def qam16_demap(symbols: np.ndarray, cmap: ConstellationMap = QAM16) -> np.ndarray:
    """Minimum-distance decisions to bits (MSB first per symbol)."""
    labels = nearest_label(np.asarray(symbols).reshape(-1), cmap)
    bps = cmap.bits_per_symbol
    shifts = np.arange(bps - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
