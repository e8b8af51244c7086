"""Nyquist WDM aggregation, polmux emulation and the amplified fiber link."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import constants
from scipy import fft as sfft

from .signal import (
    C_LIGHT,
    F_REF,
    DualPolSignal,
    SampledSignal,
    apply_delay,
    dual_power,
    fft_freqs,
    frequency_shift,
    resample,
    scale,
)

H_PLANCK = constants.h


@dataclass(frozen=True)
class Carrier:
    index: int
    freq_offset: float
    symbol_rate: float


@dataclass(frozen=True)
class CarrierPlan:
    """Carrier frequencies relative to ``plan_center`` (absolute offset from F_REF).

    Nyquist plans must satisfy ``spacing = (R_N + R_{N+1}) / 2`` for every
    adjacent pair; set ``nyquist=False`` for deliberate violations.
    """

    carriers: tuple[Carrier, ...]
    plan_center: float = 0.0
    nyquist: bool = True

    def __post_init__(self):
        if not self.carriers:
            raise ValueError("a plan needs at least one carrier")
        object.__setattr__(self, "carriers", tuple(sorted(self.carriers, key=lambda c: c.freq_offset)))
        if self.nyquist:
            report = validate_plan(self)
            if not report.ok:
                v = report.violations[0]
                raise ValueError(
                    f"carriers {v.pair} spaced {v.measured:g} Hz, Nyquist rule requires {v.required:g} Hz"
                )

    @classmethod
    def uniform(
        cls,
        n_carriers: int,
        spacing: float = 12.5e9,
        symbol_rate: float = 12.5e9,
        plan_center: float = 0.0,
        nyquist: Optional[bool] = None,
    ) -> "CarrierPlan":
        carriers = tuple(
            Carrier(i - (n_carriers - 1) // 2, (i - (n_carriers - 1) / 2) * spacing, symbol_rate)
            for i in range(n_carriers)
        )
        if nyquist is None:
            nyquist = abs(spacing - symbol_rate) <= 1.0
        return cls(carriers, plan_center, nyquist)

    def __len__(self):
        return len(self.carriers)

    def carrier(self, index: int) -> Carrier:
        for c in self.carriers:
            if c.index == index:
                return c
        raise KeyError(index)

    @property
    def center_carrier(self) -> Carrier:
        return self.carriers[len(self.carriers) // 2]


class SpacingViolation(NamedTuple):
    pair: tuple[int, int]
    measured: float
    required: float

    @property
    def deficit(self) -> float:
        """Positive when the carriers are closer than the rule allows."""
        return self.required - self.measured


class PlanReport(NamedTuple):
    ok: bool
    violations: list[SpacingViolation]


def validate_plan(plan: CarrierPlan, tol_hz: float = 1.0) -> PlanReport:
    cs = sorted(plan.carriers, key=lambda c: c.freq_offset)
    bad = []
    for a, b in zip(cs, cs[1:]):
        measured = b.freq_offset - a.freq_offset
        required = (a.symbol_rate + b.symbol_rate) / 2
        if abs(measured - required) > tol_hz:
            bad.append(SpacingViolation((a.index, b.index), measured, required))
    return PlanReport(not bad, bad)


@dataclass(frozen=True)
class FiberSpec:
    """Standard single-mode fiber span (SMF-28 datasheet defaults)."""

    length: float  # km
    dispersion: float = 17.0  # ps/(nm km)
    dispersion_slope: float = 0.0  # ps/(nm^2 km)
    attenuation: float = 0.2  # dB/km
    ref_wavelength: float = 1550.0  # nm

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("fiber length must be >= 0")
        if self.attenuation < 0:
            raise ValueError("attenuation must be >= 0")

    @property
    def loss_db(self) -> float:
        return self.attenuation * self.length


@dataclass(frozen=True)
class EdfaSpec:
    """Lumped amplifier. ``gain=None`` means "compensate the preceding span"."""

    gain: Optional[float] = None  # dB
    noise_figure: float = 5.0  # dB
    center_freq: float = F_REF  # Hz, absolute
    ase: bool = True
    gain_tilt_db_per_thz: float = 0.0

    def __post_init__(self):
        if self.gain is not None and self.gain < 0:
            raise ValueError("EDFA gain must be >= 0 dB")
        if self.ase and self.noise_figure < 10 * math.log10(2):
            warnings.warn(
                f"noise figure {self.noise_figure} dB is below the 3 dB quantum limit",
                stacklevel=2,
            )


def ase_psd(amp: EdfaSpec, gain_db: Optional[float] = None) -> float:
    """ASE power spectral density per polarization [mW/Hz]."""
    g = 10 ** ((amp.gain if gain_db is None else gain_db) / 10)
    f = 10 ** (amp.noise_figure / 10)
    return (g - 1) * H_PLANCK * amp.center_freq * f / 2 * 1e3


def aggregate_rate(n_carriers: int, spacing: float) -> float:
    """Smallest power-of-two multiple of ``spacing`` covering ``2 n spacing``."""
    mult = 2 ** math.ceil(math.log2(max(2 * n_carriers, 1)))
    return spacing * mult


def content_half_bandwidth(sig: SampledSignal, rel_tol: float = 1e-10) -> float:
    """Smallest ``B`` such that the energy beyond ``|f| > B`` is below ``rel_tol``."""
    p = np.abs(sfft.fft(sig.samples)) ** 2
    n = p.size
    # energy per |f| bin, index k = 0 .. n//2
    e = p[: n // 2 + 1].copy()
    e[1 : (n + 1) // 2] += p[: n // 2 : -1]
    tail = np.cumsum(e[::-1])[::-1]  # energy at or above bin k
    above = np.nonzero(tail > rel_tol * tail[0])[0]
    return float(above[-1] * sig.sample_rate / n)


def wdm_mux(
    channels: Sequence[tuple[SampledSignal, float]], agg_rate: float, content_floor: float = 1e-6
) -> SampledSignal:
    """Resample every channel onto the aggregate grid, shift and sum.

    A channel is accepted when its spectral content still fits the grid
    after shifting. Residue below ``content_floor`` of the channel energy
    (e.g. DAC images 70+ dB down) is ignored by that check.
    """
    if not channels:
        raise ValueError("no channels to multiplex")
    total = None
    for sig, offset in channels:
        half_bw = content_half_bandwidth(sig, content_floor)
        if abs(offset) + half_bw > agg_rate / 2 + 1e-6:
            raise ValueError(
                f"channel at {offset:g} Hz with half-bandwidth {half_bw:g} Hz exceeds the aggregate grid"
            )
        placed = frequency_shift(resample(sig, agg_rate), offset)
        total = placed.samples.copy() if total is None else total + placed.samples
        if total.size != len(placed):
            raise ValueError("channels must span the same duration")
    return SampledSignal(total, agg_rate, channels[0][0].center_freq)


def polmux_emulate(sig: SampledSignal, tau: float = 5.3e-9) -> DualPolSignal:
    """Split in two, delay one copy by ``tau`` and combine orthogonally."""
    a = 1 / math.sqrt(2)
    return DualPolSignal(scale(sig, a), scale(apply_delay(sig, tau), a))


def jones_matrix(theta: float, phi: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s * np.exp(1j * phi)], [-s * np.exp(-1j * phi), c]])


def apply_jones(sig: DualPolSignal, m: np.ndarray) -> DualPolSignal:
    out = np.asarray(m) @ sig.as_array()
    return DualPolSignal.from_arrays(out[0], out[1], sig.sample_rate, sig.center_freq)


def jones_rotate(sig: DualPolSignal, theta: float, phi: float) -> DualPolSignal:
    """Apply ``[[cos t, sin t e^{j p}], [-sin t e^{-j p}, cos t]]``."""
    return apply_jones(sig, jones_matrix(theta, phi))


def cd_phase(freqs: np.ndarray, fiber: FiberSpec, center_freq: float = 0.0) -> np.ndarray:
    """Spectral phase of the fiber CD transfer function ``exp(j phase)``.

    ``freqs`` are relative to the signal center ``F_REF + center_freq``.
    For ``D > 0`` higher frequencies are advanced (negative group delay).
    """
    lam = C_LIGHT / (F_REF + center_freq)
    d_si = (fiber.dispersion + fiber.dispersion_slope * (lam * 1e9 - fiber.ref_wavelength)) * 1e-6
    s_si = fiber.dispersion_slope * 1e3
    length = fiber.length * 1e3
    beta2 = -d_si * lam**2 / (2 * np.pi * C_LIGHT)
    # cubic term from the dispersion slope only; S = 0 gives a pure quadratic phase
    beta3 = s_si * (lam**2 / (2 * np.pi * C_LIGHT)) ** 2
    w = 2 * np.pi * np.asarray(freqs)
    return -(beta2 / 2) * w**2 * length - (beta3 / 6) * w**3 * length


def apply_cd(sig: DualPolSignal, fiber: FiberSpec, inverse: bool = False) -> DualPolSignal:
    f = fft_freqs(len(sig), sig.sample_rate)
    phase = cd_phase(f, fiber, sig.center_freq)
    h = np.exp(-1j * phase) if inverse else np.exp(1j * phase)
    X = sfft.fft(sig.as_array(), axis=1) * h
    y = sfft.ifft(X, axis=1)
    return DualPolSignal.from_arrays(y[0], y[1], sig.sample_rate, sig.center_freq)


def fiber_propagate(sig: DualPolSignal, fiber: FiberSpec) -> DualPolSignal:
    """Chromatic dispersion plus span loss, identical on both polarizations."""
    if fiber.length == 0:
        return sig
    out = apply_cd(sig, fiber)
    a = 10 ** (-fiber.loss_db / 20)
    return out.apply(lambda s: scale(s, a)) if a != 1 else out


def _gain_profile(sig: DualPolSignal, gain_db: float, tilt_db_per_thz: float) -> np.ndarray:
    f = fft_freqs(len(sig), sig.sample_rate) + sig.center_freq
    return 10 ** ((gain_db + tilt_db_per_thz * f / 1e12) / 20)


def edfa_amplify(sig: DualPolSignal, amp: EdfaSpec, rng_seed=None, gain_db: Optional[float] = None) -> DualPolSignal:
    """Scale the field by the gain and add circular white Gaussian ASE.

    The noise fills the simulation grid with ``ase_psd`` per polarization.
    ``gain_db`` overrides ``amp.gain`` (used for span-loss matching).
    """
    g_db = amp.gain if gain_db is None else gain_db
    if g_db is None:
        raise ValueError("EDFA gain not set")
    if amp.gain_tilt_db_per_thz:
        h = _gain_profile(sig, g_db, amp.gain_tilt_db_per_thz)
        y = sfft.ifft(sfft.fft(sig.as_array(), axis=1) * h, axis=1)
    else:
        y = sig.as_array() * 10 ** (g_db / 20)
    if amp.ase and g_db > 0:
        rng = np.random.default_rng(rng_seed)
        var = ase_psd(amp, g_db) * sig.sample_rate
        noise = rng.standard_normal((2, 2, len(sig)))
        y = y + math.sqrt(var / 2) * (noise[:, 0] + 1j * noise[:, 1])
    return DualPolSignal.from_arrays(y[0], y[1], sig.sample_rate, sig.center_freq)


def set_power(sig: DualPolSignal, dbm: float) -> DualPolSignal:
    p = dual_power(sig).mw
    if p == 0:
        raise ValueError("cannot set the power of an all-zero signal")
    a = math.sqrt(10 ** (dbm / 10) / p)
    return sig.apply(lambda s: scale(s, a))


@dataclass(frozen=True)
class Span:
    fiber: FiberSpec
    edfa: EdfaSpec = field(default_factory=EdfaSpec)


def link_run(sig: DualPolSignal, spans: Sequence, launch_dbm: float, rng_seed=0) -> DualPolSignal:
    """Launch at ``launch_dbm`` total power, then fiber + EDFA per span.

    ``spans`` holds :class:`Span` objects or ``(FiberSpec, EdfaSpec)`` pairs.
    Each span's noise stream is seeded from ``(rng_seed, span index)``.
    """
    out = set_power(sig, launch_dbm)
    for i, sp in enumerate(spans):
        fiber, edfa = (sp.fiber, sp.edfa) if isinstance(sp, Span) else sp
        out = fiber_propagate(out, fiber)
        gain = fiber.loss_db if edfa.gain is None else edfa.gain
        out = edfa_amplify(out, edfa, _span_seed(rng_seed, i), gain_db=gain)
    return out


def _span_seed(seed, i: int):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + (i,))
    if isinstance(seed, (list, tuple)):
        return [*seed, i]
    return [seed, i]


def add_awgn(sig: DualPolSignal, snr_db: float, symbol_rate: float, ref_power_mw: float, rng_seed=None) -> DualPolSignal:
    """White Gaussian noise with in-band symbol SNR ``snr_db`` per polarization.

    ``ref_power_mw`` is the per-polarization signal power of one carrier; the
    noise PSD is ``ref_power / (snr * symbol_rate)`` over the whole grid.
    """
    rng = np.random.default_rng(rng_seed)
    n0 = ref_power_mw / (10 ** (snr_db / 10) * symbol_rate)
    var = n0 * sig.sample_rate
    noise = rng.standard_normal((2, 2, len(sig)))
    y = sig.as_array() + math.sqrt(var / 2) * (noise[:, 0] + 1j * noise[:, 1])
    return DualPolSignal.from_arrays(y[0], y[1], sig.sample_rate, sig.center_freq)


def osnr_db(signal_mw: float, noise_psd_mw_per_hz: float, ref_bw: float = 12.5e9) -> float:
    """OSNR in a reference bandwidth (0.1 nm ~ 12.5 GHz by default).

    ``noise_psd_mw_per_hz`` is the total over both polarizations.
    """
    return 10 * math.log10(signal_mw / (noise_psd_mw_per_hz * ref_bw))


def with_center(sig: DualPolSignal, center_freq: float) -> DualPolSignal:
    return DualPolSignal(replace(sig.pol_x, center_freq=center_freq), replace(sig.pol_y, center_freq=center_freq))
