"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from . import harness, metrics
from .config import ConfigError, ScenarioConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("nyqwdm")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v, 0) for v in text.split(",") if v.strip()]


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() == "none" else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario file ([tx] [plan] [channel] [rx] [metrics])")
    common.add_argument("--seed", type=int, help="master seed (overrides channel.master_seed)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--format", choices=["csv"], default="csv")
    common.add_argument("--plots", action="store_true", help="also write SVG plots (needs matplotlib)")
    common.add_argument("--workers", type=int, default=None, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="nyqwdm", description="Nyquist WDM 16QAM link simulator")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="simulate the configured link")
    sw = sub.add_parser("sweep", parents=[common], help="repeat the run over values of one field")
    sw.add_argument("--param", required=True, help="section.key, e.g. tx.n_taps")
    sw.add_argument("--values", required=True, help="comma-separated values")
    va = sub.add_parser("validate-evm-ber", parents=[common], help="counted vs EVM-estimated BER under AWGN")
    va.add_argument("--snr", type=_floats, default=list(harness.DEFAULT_SNR_GRID), help="symbol SNRs in dB")
    va.add_argument("--n-symbols", type=int, default=1_000_000)
    xt = sub.add_parser("crosstalk", parents=[common], help="center-carrier crosstalk penalty study")
    xt.add_argument("--taps", type=_ints, default=[16, 32, 64, 128])
    xt.add_argument("--spacing-factors", type=_floats, default=[1.0, 0.9])
    xt.add_argument("--snr", type=_optional_float, default=17.0, help="white-noise load in dB, or 'none'")
    sp = sub.add_parser("spectrum", parents=[common], help="PSD of the received aggregate")
    sp.add_argument("--rbw", type=float, default=50e6, help="resolution bandwidth [Hz]")
    ra = sub.add_parser("rates", parents=[common], help="line/net rate and spectral efficiency of the plan")
    ra.add_argument("--fec-overhead", type=float, default=0.25)
    ra.add_argument("--n-carriers", type=int, default=None, help="override plan.n_carriers (e.g. 325)")
    return p


def _load(args) -> ScenarioConfig:
    cfg = cfgmod.load(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.replace("channel.master_seed", args.seed)
    return cfg


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([metrics.fmt(v) for v in r])


def _write_run(out: Path, res: harness.RunResult) -> None:
    (out / "results.csv").write_text(res.csv_text())
    (out / "sync.json").write_text(json.dumps(res.sync_dict(), indent=2, sort_keys=True) + "\n")
    (out / "provenance.json").write_text(json.dumps(res.provenance, indent=2, sort_keys=True) + "\n")
    cfgmod.dump(res.config, out / "config.ini")


def _plot_constellation(path: Path, res: harness.RunResult) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    s = res.center.symbols[0]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(s.real, s.imag, ",", alpha=0.3)
    ax.set_aspect("equal")
    ax.set_xlabel("I")
    ax.set_ylabel("Q")
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_psd(path: Path, view) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(view.bin_freqs / 1e9, view.psd_db, lw=0.8)
    ax.set_xlabel("frequency [GHz]")
    ax.set_ylabel("PSD [dB mW/Hz]")
    fig.savefig(path, format="svg")
    plt.close(fig)


def _dispatch(args) -> None:
    cfg = _load(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    w = args.workers

    if args.verb == "run":
        res = harness.run_link(cfg, w)
        _write_run(out, res)
        if args.plots:
            _plot_constellation(out / "constellation.svg", res)
    elif args.verb == "sweep":
        raw = [v.strip() for v in args.values.split(",") if v.strip()]
        results = harness.sweep(cfg, args.param, raw, w)
        rows = [[v, *r.cells()] for v, res in zip(raw, results) for r in res.rows()]
        _write_csv(out / "sweep.csv", ["value", *metrics.RESULT_COLUMNS], rows)
    elif args.verb == "validate-evm-ber":
        pts = harness.validate_evm_ber(cfg, args.snr, args.n_symbols, w)
        rows = [
            [p.snr_db, p.evm_percent, p.ber_est, p.ber_counted, p.errors, p.n_bits, "" if p.ratio is None else p.ratio, p.status]
            for p in pts
        ]
        _write_csv(
            out / "evm_ber.csv",
            ["snr_db", "evm_percent", "ber_est", "ber_counted", "errors", "n_bits", "ratio", "status"],
            rows,
        )
    elif args.verb == "crosstalk":
        if args.snr is None:
            cfg = cfg.replace("channel.snr_db", None)
        pts = harness.crosstalk_study(cfg, args.taps, args.spacing_factors, args.snr, w)
        rows = [[p.n_taps, p.spacing, p.report.evm_with, p.report.evm_without, p.penalty] for p in pts]
        _write_csv(
            out / "crosstalk.csv",
            ["n_taps", "spacing_hz", "evm_with_percent", "evm_without_percent", "penalty_pp"],
            rows,
        )
    elif args.verb == "spectrum":
        view = harness.aggregate_spectrum(cfg, args.rbw, w)
        with open(out / "spectrum.csv", "w", newline="") as fh:
            metrics.write_spectrum_csv(fh, view)
        if args.plots:
            _plot_psd(out / "spectrum.svg", view)
    elif args.verb == "rates":
        if args.n_carriers is not None:
            cfg = cfg.replace("plan.n_carriers", args.n_carriers)
        r = metrics.rate_summary(cfg.carrier_plan(), 4, 2, args.fec_overhead)
        header = ["n_carriers", "symbol_rate", "line_rate", "net_rate", "occupied_bw", "net_spectral_efficiency"]
        row = [r.n_carriers, r.symbol_rate, r.line_rate, r.net_rate, r.occupied_bw, r.net_spectral_efficiency]
        _write_csv(out / "rates.csv", header, [row])
        print(
            f"line {r.line_rate / 1e12:.4g} Tbit/s, net {r.net_rate / 1e12:.4g} Tbit/s, "
            f"SE {r.net_spectral_efficiency:.3g} bit/s/Hz"
        )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
