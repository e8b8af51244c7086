"""End-to-end orchestration: transmit, multiplex, propagate, receive, score.

Block layout
------------
Every carrier transmits one circular block of ``n_total`` symbols. A guard
of ``2 * ceil(n_taps / (2 sps)) + eq_taps`` symbols at the start and end is
excluded from all metrics; ``n_total`` is the payload plus both guards,
rounded up to 1024 times a 5-smooth number so every FFT length factors
into small primes (the surplus extends the tail guard).

Random streams
--------------
All randomness derives from ``channel.master_seed`` through
``numpy.random.default_rng([master_seed, stage, position])`` where
``position`` is the carrier's place in the plan (0 = lowest frequency)
and ``stage`` is one of the ``STAGE_*`` constants. Results therefore do
not depend on the number of worker threads.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import metadata
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from . import channel as ch
from . import metrics as mt
from . import rx
from . import tx
from .config import ConfigError, ScenarioConfig
from .signal import DualPolSignal, SampledSignal, SpectrumView, freq_to_wavelength_nm

log = logging.getLogger("nyqwdm")

STAGE_PRBS = 0
STAGE_LINK = 1
STAGE_AWGN = 2
STAGE_LO = 3

#: Fewer counted errors than this and a BER ratio is not reported.
COUNTING_FLOOR_ERRORS = 10


class StageError(RuntimeError):
    """A processing stage failed; ``stage`` and ``carrier`` locate it."""

    def __init__(self, stage: str, carrier: Optional[int], cause: BaseException):
        where = f"carrier {carrier}" if carrier is not None else "link"
        super().__init__(f"[{stage}] {where}: {cause}")
        self.stage = stage
        self.carrier = carrier
        self.cause = cause


def _stage(name: str, carrier: Optional[int], fn: Callable, *args, **kwargs):
    log.debug("[%s] carrier=%s", name, carrier)
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(name, carrier, exc) from exc


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# -- block bookkeeping -------------------------------------------------------------


def guard_symbols(cfg: ScenarioConfig) -> int:
    sps = cfg.tx.samples_per_symbol
    return 2 * math.ceil(cfg.tx.n_taps / (2 * sps)) + cfg.rx.eq_taps


def block_layout(cfg: ScenarioConfig) -> tuple[int, slice]:
    """Total block length in symbols and the payload slice.

    The length is a multiple of 1024 symbols and keeps the aggregate grid
    length integral when the grid rate is not a whole multiple of the symbol
    rate (for example a narrowed carrier spacing).
    """
    g = guard_symbols(cfg)
    n = cfg.metrics.n_symbols
    ratio = Fraction(ch.aggregate_rate(cfg.plan.n_carriers, cfg.plan.spacing) / cfg.plan.symbol_rate)
    unit = math.lcm(1024, ratio.limit_denominator(10**6).denominator)
    total = unit * sfft.next_fast_len(-(-(n + 2 * g) // unit))
    return total, slice(g, g + n)


def _rng(cfg: ScenarioConfig, stage: int, position: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.channel.master_seed, stage, position])


def carrier_prbs_seed(cfg: ScenarioConfig, position: int) -> int:
    if cfg.plan.seed_split == "odd-even":
        return cfg.tx.prbs_seed if position % 2 == 0 else cfg.tx.prbs_seed_odd
    return int(_rng(cfg, STAGE_PRBS, position).integers(1, 2**15))


def pol_delay_symbols(cfg: ScenarioConfig) -> float:
    return cfg.channel.polmux_tau * cfg.plan.symbol_rate


# -- results -------------------------------------------------------------------------


@dataclass(eq=False)
class CarrierResult:
    index: int
    freq_offset: float
    wavelength_nm: float
    evm: mt.EvmReport
    ber_est: tuple[float, ...]
    ber_counted: tuple[mt.BerCount, ...]
    gauss: tuple[Optional[mt.GaussianityReport], ...]
    sync: rx.SyncReport
    symbols: np.ndarray = field(repr=False)

    def rows(self) -> list[mt.ResultRow]:
        out = []
        for p, name in enumerate(("x", "y")):
            g = self.gauss[p]
            out.append(
                mt.ResultRow(
                    self.index,
                    self.freq_offset,
                    self.wavelength_nm,
                    name,
                    100 * self.evm.per_pol[p],
                    self.ber_est[p],
                    self.ber_counted[p].ber,
                    self.evm.n_symbols,
                    "na" if g is None else g.passed,
                )
            )
        return out

    @property
    def ber_counted_total(self) -> float:
        errs = sum(b.errors for b in self.ber_counted)
        return errs / sum(b.n_bits for b in self.ber_counted)


@dataclass(eq=False)
class RunResult:
    config: ScenarioConfig
    carriers: list[CarrierResult]
    rates: mt.RateSummary
    provenance: dict

    def carrier(self, index: int) -> CarrierResult:
        for c in self.carriers:
            if c.index == index:
                return c
        raise KeyError(index)

    @property
    def center(self) -> CarrierResult:
        return self.carrier(self.config.carrier_plan().center_carrier.index)

    def rows(self) -> list[mt.ResultRow]:
        return [r for c in self.carriers for r in c.rows()]

    def csv_text(self) -> str:
        buf = io.StringIO()
        mt.write_results_csv(buf, self.rows())
        return buf.getvalue()

    def sync_dict(self) -> dict:
        return {str(c.index): c.sync.as_dict() for c in self.carriers}


# -- transmitter side ---------------------------------------------------------------


@dataclass(eq=False)
class TxBlock:
    bits: np.ndarray
    symbols: np.ndarray
    waveform: SampledSignal


def transmit(cfg: ScenarioConfig, position: int, n_total: int) -> TxBlock:
    bits = tx.prbs_generate(4 * n_total, seed=carrier_prbs_seed(cfg, position))
    symbols = tx.qam16_map(bits)
    wave = tx.tx_channel(bits, tx.QAM16, cfg.shaper(), cfg.dac())
    return TxBlock(bits, symbols, wave)


def _active_positions(cfg: ScenarioConfig) -> list[int]:
    n = cfg.plan.n_carriers
    return [n // 2] if cfg.plan.active == "center" else list(range(n))


def build_link_output(cfg: ScenarioConfig, workers: Optional[int] = None) -> tuple[DualPolSignal, dict[int, TxBlock]]:
    """Transmit all active carriers and propagate the aggregate."""
    plan = cfg.carrier_plan()
    n_total, _ = block_layout(cfg)
    active = _active_positions(cfg)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        blocks = dict(zip(active, pool.map(lambda p: _stage("tx", plan.carriers[p].index, transmit, cfg, p, n_total), active)))

    n = cfg.plan.n_carriers
    agg_rate = ch.aggregate_rate(n, cfg.plan.spacing)
    channels = [(blocks[p].waveform, plan.carriers[p].freq_offset) for p in active]
    agg = _stage("mux", None, ch.wdm_mux, channels, agg_rate)
    agg = SampledSignal(agg.samples, agg.sample_rate, plan.plan_center)

    c = cfg.channel
    sig = _stage("polmux", None, ch.polmux_emulate, agg, c.polmux_tau)
    sig = ch.jones_rotate(sig, c.jones_theta, c.jones_phi)
    # per-carrier launch power is fixed by the full plan so switching
    # neighbors off leaves the carrier under test unchanged
    launch_total = c.launch_dbm + 10 * math.log10(len(active) / n)
    sig = _stage("link", None, ch.link_run, sig, cfg.spans(), launch_total, [c.master_seed, STAGE_LINK])
    if c.snr_db is not None:
        ref_mw = 10 ** (c.launch_dbm / 10) / n / 2
        sig = _stage(
            "awgn", None, ch.add_awgn, sig, c.snr_db, cfg.plan.symbol_rate, ref_mw, _rng(cfg, STAGE_AWGN)
        )
    return sig, blocks


# -- receiver side -------------------------------------------------------------------


MIN_TRAIN_PER_TAP = 40  # LS misadjustment about 2 * taps / n_train


def _frame_sync(sig: DualPolSignal, refs: np.ndarray) -> tuple[DualPolSignal, int]:
    """Integer symbol alignment by correlation at the symbol instants.

    Every received row is correlated against every reference row so that the
    lag is found regardless of polarization mixing and the tributary delay.
    """
    y = sig.as_array()[:, ::2]
    Y = sfft.fft(y, axis=1)
    R = np.conj(sfft.fft(np.atleast_2d(refs), y.shape[1], axis=1))
    corr = np.sum(np.abs(sfft.ifft(Y[:, None, :] * R[None, :, :], axis=2)) ** 2, axis=(0, 1))
    lag = int(np.argmax(corr))
    x = np.roll(sig.as_array(), -2 * lag, axis=1)
    if lag > y.shape[1] // 2:
        lag -= y.shape[1]
    return DualPolSignal.from_arrays(x[0], x[1], sig.sample_rate, sig.center_freq), lag


def _resolve_quadrant(y: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Undo the pi/2 ambiguity of blind phase recovery using known symbols."""
    best = min(range(4), key=lambda q: np.mean(np.abs(y * 1j**q - ref) ** 2))
    return y * 1j**best


def receive(
    cfg: ScenarioConfig, sig: DualPolSignal, position: int, block: TxBlock
) -> CarrierResult:
    plan = cfg.carrier_plan()
    carrier = plan.carriers[position]
    idx = carrier.index
    rcfg = cfg.rx_config()
    R = carrier.symbol_rate
    fs = sig.sample_rate
    n_total, payload = block_layout(cfg)
    d_pol = pol_delay_symbols(cfg)
    s = block.symbols
    ref = np.stack([s, np.roll(s, int(round(d_pol)))])

    # optical group selection, clipped to the simulation grid
    off = carrier.freq_offset
    bw = min(rcfg.wss_bandwidth, fs - 2 * abs(off))
    y = _stage("wss", idx, rx.wss_select, sig, off, bw)
    y = _stage(
        "downconvert", idx, rx.downconvert, y, rcfg.lo_offset, rcfg.lo_linewidth, _rng(cfg, STAGE_LO, position)
    )
    y = _stage("cd", idx, rx.cd_compensate, y, rcfg.cd_params)

    fo_est = 0.0
    if rcfg.fo_mode != "off":
        probe = rx.channel_select(y, 0.0, R)
        fo = _stage("fo", idx, rx.freq_offset_recover, probe, R)
        fo_est = fo.offset
        y = rx.downconvert(y, fo_est)
    y = _stage("select", idx, rx.channel_select, y, 0.0, R)

    if rcfg.clock_mode == "data-aided":
        cr = _stage("clock", idx, rx.clock_recover, y, s, "data-aided", d_pol)
        y, frame = cr.signal, cr.frame_offset
    else:
        cr = _stage("clock", idx, rx.clock_recover, y, None, "blind")
        y, frame = _frame_sync(cr.signal, ref)
    if cr.ambiguous:
        raise StageError("clock", idx, rx.SyncError("timing metric is flat"))

    n_train = max(int(round(cfg.metrics.training_fraction * n_total)), MIN_TRAIN_PER_TAP * rcfg.eq_taps)
    if rcfg.fo_mode == "data-aided":
        fo = _stage("fo", idx, rx.freq_offset_recover, y, R, ref[:, :n_train])
        fo_est += fo.offset
        y = fo.signal

    eq = _stage("equalizer", idx, rx.pol_demux_equalize, y, rcfg, ref, n_train)
    out = eq.symbols
    slip = False
    if rcfg.lo_linewidth > 0:
        rec = []
        for p in range(2):
            pr = _stage("cpr", idx, rx.carrier_phase_recover, out[p], tx.QAM16, rcfg.cpr_gain)
            slip |= pr.cycle_slip
            rec.append(_resolve_quadrant(pr.symbols, ref[p]))
        out = np.stack(rec)

    sync = rx.SyncReport(fo_est, cr.timing_phase, frame, eq.pol_matrix, eq.converged and not eq.diverged, slip)

    got = out[:, payload]
    want = ref[:, payload]
    evm = mt.evm_compute(got, None if cfg.metrics.reference == "decided" else want)
    ber_est = tuple(mt.ber_from_evm(max(e, 1e-12)) for e in evm.per_pol)
    counted = tuple(
        _stage("ber", idx, mt.ber_count, rx.qam16_demap(want[p]), rx.qam16_demap(got[p])) for p in range(2)
    )
    gauss = tuple(
        mt.gaussianity_test(evm.error_vectors[p])
        if cfg.metrics.gauss_test and evm.n_symbols >= 10_000
        else None
        for p in range(2)
    )
    wl = freq_to_wavelength_nm(plan.plan_center + off)
    return CarrierResult(idx, off, wl, evm, ber_est, counted, gauss, sync, got)


# -- public entry points ---------------------------------------------------------------


def run_link(cfg: ScenarioConfig, workers: Optional[int] = None) -> RunResult:
    """Transmit, propagate and receive every evaluated carrier of the plan."""
    log.info("[run] %d carriers, %d spans, %d symbols", cfg.plan.n_carriers, cfg.channel.n_spans, cfg.metrics.n_symbols)
    sig, blocks = build_link_output(cfg, workers)
    active = _active_positions(cfg)
    evaluate = [cfg.plan.n_carriers // 2] if cfg.metrics.evaluate == "center" else active
    if not set(evaluate) <= set(active):
        raise ConfigError("evaluated carriers must be active")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda p: receive(cfg, sig, p, blocks[p]), evaluate))
    prov = {"config_sha256": cfg.digest(), "master_seed": cfg.channel.master_seed, "version": version()}
    rates = mt.rate_summary(cfg.carrier_plan(), 4, 2, 0.25)
    return RunResult(cfg, results, rates, prov)


def sweep(cfg: ScenarioConfig, path: str, values: Sequence, workers: Optional[int] = None) -> list[RunResult]:
    """One run per value of the scalar field ``path`` (``section.key``)."""
    configs = [cfg.replace(path, v) for v in values]
    return [run_link(c, workers) for c in configs]


@dataclass(frozen=True)
class EvmBerPoint:
    snr_db: float
    evm_percent: float
    ber_est: float
    ber_counted: float
    errors: int
    n_bits: int

    @property
    def below_floor(self) -> bool:
        return self.errors < COUNTING_FLOOR_ERRORS

    @property
    def ratio(self) -> Optional[float]:
        """Counted over estimated BER, or None below the counting floor."""
        return None if self.below_floor else self.ber_counted / self.ber_est

    @property
    def status(self) -> str:
        return "below counting floor" if self.below_floor else "ok"


#: Symbol SNRs [dB] spanning BER ~3e-2 .. 1e-4; the middle four land on
#: EVM_m of about 14.8, 13.8, 12.0 and 11.9 %.
DEFAULT_SNR_GRID = (12.0, 13.0, 14.04, 14.65, 15.86, 15.93, 17.0, 18.0)


def awgn_config(cfg: ScenarioConfig, snr_db: float, n_symbols: int) -> ScenarioConfig:
    c = cfg
    for path, v in (
        ("plan.n_carriers", 1),
        ("plan.active", "all"),
        ("channel.n_spans", 0),
        ("channel.ase", False),
        ("channel.snr_db", snr_db),
        ("metrics.n_symbols", n_symbols),
        ("metrics.evaluate", "all"),
        ("metrics.gauss_test", False),
    ):
        c = c.replace(path, v)
    return c


def validate_evm_ber(
    cfg: ScenarioConfig,
    snr_grid: Sequence[float] = DEFAULT_SNR_GRID,
    n_symbols: int = 1_000_000,
    workers: Optional[int] = None,
) -> list[EvmBerPoint]:
    """Counted vs EVM-estimated BER on an AWGN-only single-carrier link."""
    out = []
    for snr in snr_grid:
        res = run_link(awgn_config(cfg, snr, n_symbols), workers).carriers[0]
        errs = sum(b.errors for b in res.ber_counted)
        nb = sum(b.n_bits for b in res.ber_counted)
        evm = res.evm.evm_m_rms
        out.append(EvmBerPoint(float(snr), 100 * evm, mt.ber_from_evm(evm), errs / nb, errs, nb))
        log.info("[validate] snr=%.2f dB evm=%.2f %% est=%.3g counted=%.3g", snr, 100 * evm, out[-1].ber_est, errs / nb)
    return out


@dataclass(frozen=True)
class CrosstalkPoint:
    n_taps: int
    spacing: float
    report: mt.CrosstalkReport

    @property
    def penalty(self) -> float:
        return self.report.penalty


def crosstalk_study(
    cfg: ScenarioConfig,
    n_taps_values: Sequence[int] = (16, 32, 64, 128),
    spacing_factors: Sequence[float] = (1.0,),
    snr_db: Optional[float] = 17.0,
    workers: Optional[int] = None,
) -> list[CrosstalkPoint]:
    """Center-carrier EVM penalty from neighbors, per tap count and spacing.

    Each point pairs a run with all carriers against one with the neighbors
    switched off, sharing grid, seeds and noise. ``snr_db`` loads the
    receiver with white noise so the penalty is measured on a realistic
    EVM baseline (17 dB gives about 10.5 % EVM_m); ``None`` keeps
    ``channel.snr_db`` from ``cfg``.
    """
    if cfg.plan.n_carriers < 3 or cfg.plan.n_carriers % 2 == 0:
        raise ConfigError("crosstalk study needs an odd number of carriers, at least 3")
    base = cfg.replace("metrics.evaluate", "center")
    if snr_db is not None:
        base = base.replace("channel.snr_db", snr_db)
    out = []
    for factor in spacing_factors:
        for taps in n_taps_values:
            c = base.replace("tx.n_taps", taps).replace("plan.spacing", factor * cfg.plan.symbol_rate)
            with_n = run_link(c.replace("plan.active", "all"), workers).center
            without = run_link(c.replace("plan.active", "center"), workers).center
            pt = CrosstalkPoint(taps, c.plan.spacing, mt.crosstalk_measure(with_n.evm, without.evm))
            log.info("[crosstalk] taps=%d spacing=%.4g GHz penalty=%.3f pp", taps, c.plan.spacing / 1e9, pt.penalty)
            out.append(pt)
    return out


def aggregate_spectrum(cfg: ScenarioConfig, resolution_bw: float = 50e6, workers: Optional[int] = None) -> SpectrumView:
    """Welch PSD of the received aggregate (x polarization)."""
    sig, _ = build_link_output(cfg, workers)
    return mt.psd_estimate(sig.pol_x, resolution_bw)


__all__ = [
    "StageError",
    "RunResult",
    "CarrierResult",
    "EvmBerPoint",
    "CrosstalkPoint",
    "run_link",
    "sweep",
    "validate_evm_ber",
    "crosstalk_study",
    "aggregate_spectrum",
]
