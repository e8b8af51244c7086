"""Scenario configuration: sectioned ``key = value`` text with strict keys.

Sections are ``[tx]``, ``[plan]``, ``[channel]``, ``[rx]`` and ``[metrics]``.
Floats are written with ``repr`` so parse -> serialize -> parse is exact.
Optional values use a per-field keyword (``ideal``, ``auto``, ``none``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import Any, Optional, Union, get_type_hints

from . import tx
from .channel import CarrierPlan, EdfaSpec, FiberSpec, Span
from .rx import RxConfig


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


def _opt(token: str):
    return field(default=None, metadata={"none": token})


@dataclass(frozen=True)
class TxSection:
    prbs_seed: int = tx.DEFAULT_PRBS_SEED
    prbs_seed_odd: int = 0x2A55
    constellation: str = "16QAM"
    n_taps: int = 64
    samples_per_symbol: int = 2
    window: str = "rect"
    dac_quant_bits: Optional[int] = _opt("ideal")
    dac_aa_filter: bool = True
    aa_f3db: float = 12e9
    aa_stop_freq: float = 13e9
    aa_stop_atten: float = 30.0


@dataclass(frozen=True)
class PlanSection:
    n_carriers: int = 5
    spacing: float = 12.5e9
    symbol_rate: float = 12.5e9
    plan_center: float = 0.0
    # "odd-even": two PRBS sources alternate across carriers;
    # "per-carrier": each carrier's PRBS start state comes from the master seed
    seed_split: str = "odd-even"
    active: str = "all"  # "center" switches the neighbors off


@dataclass(frozen=True)
class ChannelSection:
    n_spans: int = 3
    span_length_km: float = 75.78
    dispersion: float = 17.0
    dispersion_slope: float = 0.0
    attenuation: float = 0.2
    noise_figure: float = 5.0
    ase: bool = False
    launch_dbm: float = 0.0
    polmux_tau: float = 5.3e-9
    jones_theta: float = 0.6
    jones_phi: float = 1.0
    snr_db: Optional[float] = _opt("none")
    master_seed: int = 1


@dataclass(frozen=True)
class RxSection:
    wss_bandwidth: float = 60e9
    eq_taps: int = 51
    eq_step: float = 1e-3
    dd_step: float = 1e-4
    pll_gain: float = 0.02
    train_epochs: int = 30
    eq_init: str = "ls"
    cd_length_km: Optional[float] = _opt("auto")
    lo_offset: float = 0.0
    lo_linewidth: float = 0.0
    cpr_gain: float = 0.2
    fo_mode: str = "blind"
    clock_mode: str = "data-aided"


@dataclass(frozen=True)
class MetricsSection:
    n_symbols: int = 100_000
    training_fraction: float = 0.01
    reference: str = "known"  # or "decided"
    evaluate: str = "all"  # or "center"
    gauss_test: bool = True


SECTIONS = {
    "tx": TxSection,
    "plan": PlanSection,
    "channel": ChannelSection,
    "rx": RxSection,
    "metrics": MetricsSection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    tx: TxSection = TxSection()
    plan: PlanSection = PlanSection()
    channel: ChannelSection = ChannelSection()
    rx: RxSection = RxSection()
    metrics: MetricsSection = MetricsSection()

    def __post_init__(self):
        validate(self)

    # -- derived objects -----------------------------------------------------

    def shaper(self) -> tx.ShaperConfig:
        return tx.ShaperConfig(self.tx.n_taps, self.tx.samples_per_symbol, self.plan.symbol_rate, self.tx.window)

    def dac(self) -> tx.DacConfig:
        t = self.tx
        return tx.DacConfig(
            sample_rate=self.shaper().sample_rate,
            quant_bits=t.dac_quant_bits,
            aa_filter=t.dac_aa_filter,
            aa_f3db=t.aa_f3db,
            aa_stop_freq=t.aa_stop_freq,
            aa_stop_atten=t.aa_stop_atten,
        )

    def carrier_plan(self) -> CarrierPlan:
        p = self.plan
        return CarrierPlan.uniform(p.n_carriers, p.spacing, p.symbol_rate, p.plan_center)

    def fiber(self) -> FiberSpec:
        c = self.channel
        return FiberSpec(c.span_length_km, c.dispersion, c.dispersion_slope, c.attenuation)

    def spans(self) -> list[Span]:
        c = self.channel
        return [Span(self.fiber(), EdfaSpec(noise_figure=c.noise_figure, ase=c.ase))] * c.n_spans

    def cd_fiber(self) -> FiberSpec:
        """Dispersion the receiver compensates (matched to the link unless overridden)."""
        c = self.channel
        length = c.n_spans * c.span_length_km if self.rx.cd_length_km is None else self.rx.cd_length_km
        return FiberSpec(length, c.dispersion, c.dispersion_slope, 0.0)

    def rx_config(self) -> RxConfig:
        r = self.rx
        return RxConfig(
            wss_bandwidth=r.wss_bandwidth,
            eq_taps=r.eq_taps,
            eq_step=r.eq_step,
            dd_step=r.dd_step,
            pll_gain=r.pll_gain,
            train_epochs=r.train_epochs,
            eq_init=r.eq_init,
            cd_params=self.cd_fiber(),
            lo_offset=r.lo_offset,
            lo_linewidth=r.lo_linewidth,
            cpr_gain=r.cpr_gain,
            fo_mode=r.fo_mode,
            clock_mode=r.clock_mode,
        )

    # -- editing ---------------------------------------------------------------

    def replace(self, path: str, value: Any) -> "ScenarioConfig":
        """Copy with one scalar field changed; ``path`` is ``section.key``."""
        sec, key = _split_path(path)
        section = getattr(self, sec)
        hints = get_type_hints(type(section))
        try:
            v = _coerce(value, hints[key], _none_token(type(section), key))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return dataclasses.replace(self, **{sec: dataclasses.replace(section, **{key: v})})

    def get(self, path: str) -> Any:
        sec, key = _split_path(path)
        return getattr(getattr(self, sec), key)

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def _split_path(path: str) -> tuple[str, str]:
    sec, _, key = path.partition(".")
    if sec not in SECTIONS or not key:
        raise ConfigError(f"invalid parameter path {path!r}; expected section.key")
    if key not in {f.name for f in dataclasses.fields(SECTIONS[sec])}:
        raise ConfigError(f"unknown key {key!r} in section [{sec}]")
    return sec, key


def _none_token(cls, key: str) -> Optional[str]:
    for f in dataclasses.fields(cls):
        if f.name == key:
            return f.metadata.get("none")
    return None


def _base_type(tp):
    args = getattr(tp, "__args__", None)
    if args and type(None) in args:
        return next(a for a in args if a is not type(None))
    return tp


def _coerce(value: Any, tp, none_token: Optional[str]):
    """Convert text or a Python value to the field type."""
    if value is None or (none_token is not None and isinstance(value, str) and value.strip().lower() == none_token):
        if none_token is None:
            raise ValueError("value required")
        return None
    base = _base_type(tp)
    if base is bool:
        if isinstance(value, str):
            s = value.strip().lower()
            if s in ("true", "yes", "on", "1"):
                return True
            if s in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if base is int:
        if isinstance(value, str):
            return int(value.strip(), 0)
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    if base is float:
        return float(value)
    return str(value).strip()


def _format(value: Any, none_token: Optional[str]) -> str:
    if value is None:
        return none_token or ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def validate(cfg: ScenarioConfig) -> None:
    """Raise :class:`ConfigError` on inconsistent settings."""
    p, c, m, t = cfg.plan, cfg.channel, cfg.metrics, cfg.tx
    checks = [
        (t.constellation == "16QAM", "only 16QAM is supported"),
        (p.n_carriers >= 1, "n_carriers must be >= 1"),
        (p.spacing > 0 and p.symbol_rate > 0, "spacing and symbol_rate must be positive"),
        (p.seed_split in ("odd-even", "per-carrier"), f"unknown seed_split {p.seed_split!r}"),
        (p.active in ("all", "center"), f"unknown active mode {p.active!r}"),
        (c.n_spans >= 0 and c.span_length_km >= 0, "span count and length must be >= 0"),
        (c.polmux_tau >= 0, "polmux_tau must be >= 0"),
        (c.master_seed >= 0, "master_seed must be >= 0"),
        (t.prbs_seed % 0x8000 != 0 and t.prbs_seed_odd % 0x8000 != 0, "PRBS seeds must be nonzero 15-bit words"),
        (m.n_symbols >= 1024, "n_symbols must be >= 1024"),
        (0 < m.training_fraction < 1, "training_fraction must be in (0, 1)"),
        (m.reference in ("known", "decided"), f"unknown reference mode {m.reference!r}"),
        (m.evaluate in ("all", "center"), f"unknown evaluate mode {m.evaluate!r}"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    try:
        cfg.shaper()
        cfg.dac()
        cfg.rx_config()
        cfg.fiber()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def loads(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    parts = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = SECTIONS[sec]
        hints = get_type_hints(cls)
        kw = {}
        for key, raw in cp.items(sec):
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            try:
                kw[key] = _coerce(raw, hints[key], _none_token(cls, key))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
        parts[sec] = cls(**kw)
    return ScenarioConfig(**parts)


def dumps(cfg: ScenarioConfig) -> str:
    out = io.StringIO()
    for sec in SECTIONS:
        section = getattr(cfg, sec)
        out.write(f"[{sec}]\n")
        for f in dataclasses.fields(section):
            out.write(f"{f.name} = {_format(getattr(section, f.name), f.metadata.get('none'))}\n")
        out.write("\n")
    return out.getvalue()


def load(path: Union[str, os.PathLike]) -> ScenarioConfig:
    try:
        with open(path) as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def dump(cfg: ScenarioConfig, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
