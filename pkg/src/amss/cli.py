"""``amss`` command line.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 ``simulate`` finished but the remote predictor fell back to the local
surrogate for at least one interval.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FALLBACK = 0, 1, 2, 3

log = logging.getLogger("amss")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - {"policy", "surrogate", "layout", "crossfade", "timeout", "n_bands"}
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .acoustics import read_wav
    from .engine import SelectionPolicy, run_session
    from .maskers import SpeakerLayout, load_manifest
    from .predictor import RemotePredictor, SurrogateConfig, SurrogatePredictor
    from .simulator import mix_session, session_report, write_session_outputs

    cfg = _load_config(args.config)
    policy_cfg = dict(cfg.get("policy", {}))
    if args.seed is not None:
        policy_cfg["rng_seed"] = args.seed
    if args.interval is not None:
        policy_cfg["interval"] = args.interval
    policy = SelectionPolicy.from_dict(policy_cfg)
    layout = SpeakerLayout.from_dict(cfg["layout"]) if "layout" in cfg else SpeakerLayout()
    surrogate = SurrogatePredictor(SurrogateConfig.from_dict(cfg.get("surrogate")))

    target = args.predictor or os.environ.get("AMSS_PREDICTOR_URL") or "local"
    if target == "local":
        predictor = surrogate
    elif target.startswith(("http://", "https://")):
        predictor = RemotePredictor(target, timeout=cfg.get("timeout", args.timeout), fallback=surrogate)
    else:
        raise UsageError(f"--predictor must be 'local' or an http(s) URL, got {target!r}")

    bank = load_manifest(args.manifest)
    ambient = read_wav(args.ambient, calibration=args.calibration)
    session_id = args.session_id or Path(args.ambient).stem
    slog = run_session(
        bank, policy, predictor, ambient, duration=args.duration, layout=layout,
        session_id=session_id, site=args.site, condition=args.condition,
        n_bands=cfg.get("n_bands", 64),
    )
    slog.meta["predictor"] = target
    augmented = mix_session(ambient, slog, bank, layout, crossfade=cfg.get("crossfade", args.crossfade))
    report = session_report(ambient, augmented, step=args.laf_step)
    paths = write_session_outputs(args.out, session_id, ambient, augmented, report, slog, plots=not args.no_plots)

    summary = {
        "session_id": session_id,
        "intervals": len(slog.entries),
        "backends": sorted(slog.backends()),
        **{k: round(v, 4) for k, v in report.deltas.items()},
        "outputs": {k: str(v) for k, v in paths.items()},
    }
    print(json.dumps(summary, indent=2))
    if "remote-fallback" in slog.backends():
        log.warning("remote predictor fell back to the local surrogate for some intervals")
        return EXIT_FALLBACK
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .acoustics import metrics_report, read_wav

    w = read_wav(args.input, calibration=args.calibration)
    report = metrics_report(w, step=args.step)
    print(report.to_json(), end="")
    if args.out:
        from .fileio import write_text
        from .plotting import plot_laf_comparison

        out = _out_dir(args.out)
        stem = Path(args.input).stem
        write_text(out / f"{stem}.json", report.to_json())
        report.laf_series.write_csv(out / f"{stem}.csv")
        if not args.no_plots:
            plot_laf_comparison(report.laf_series, report.laf_series, out / f"{stem}.laf.png", title=stem)
    return EXIT_OK


def cmd_analyze_survey(args) -> int:
    from .analysis import ATTRIBUTES, contrast_table, kendall_matrix, read_survey, rows_to_csv
    from .fileio import write_text

    records = read_survey(args.csv)
    table = contrast_table(records)
    contrasts_csv = rows_to_csv(table.contrasts)
    print(contrasts_csv, end="")
    if args.out:
        out = _out_dir(args.out)
        write_text(out / "cells.csv", rows_to_csv(table.cells))
        write_text(out / "contrasts.csv", contrasts_csv)
        write_text(out / "long.csv", rows_to_csv(table.long_format()))
        columns = {
            a: [r.values.get(a, np.nan) for r in records]
            for a in ATTRIBUTES if any(a in r.values for r in records)
        }
        write_text(out / "kendall.csv", rows_to_csv(kendall_matrix(columns)))
        if not args.no_plots and table.contrasts:
            from .plotting import plot_contrasts

            plot_contrasts(table.contrasts, out / "contrasts.png")
    return EXIT_OK


def cmd_analyze_logs(args) -> int:
    from .analysis import rows_to_csv
    from .engine import SessionLog, selection_frequency_report
    from .fileio import write_text

    paths = sorted(glob.glob(args.glob, recursive=True))
    if not paths:
        raise FileNotFoundError(f"no session logs match {args.glob!r}")
    report = selection_frequency_report(SessionLog.read(p) for p in paths)
    rows = [{"masker_id": k, "percent": v} for k, v in report.items()]
    text = rows_to_csv(rows, ["masker_id", "percent"]) or "masker_id,percent\n"
    print(text, end="")
    if args.out:
        out = _out_dir(args.out)
        write_text(out / "selection_frequency.csv", text)
        if not args.no_plots and report:
            from .plotting import plot_selection_frequency

            plot_selection_frequency(report, out / "selection_frequency.png")
    return EXIT_OK


def cmd_calib_check(args) -> int:
    from .maskers import gain_for_target_spl, read_calibration

    table = read_calibration(args.table, Path(args.table).stem)
    lo, hi = table.spl_range
    targets = np.arange(lo, hi + args.step / 2, args.step)
    worst = 0.0
    rows = []
    for t in targets:
        g = gain_for_target_spl(table, float(t))
        spl, _ = table.spl_of_gain(g)
        err = abs(spl - t)
        worst = max(worst, err)
        rows.append(f"{t:.2f},{g:.6g},{spl:.4f},{err:.2e}")
    print("target_dba,digital_gain,roundtrip_dba,abs_error_db")
    print("\n".join(rows))
    ok = worst < args.tolerance
    print(f"# {len(rows)} targets in [{lo:g}, {hi:g}] dBA, max error {worst:.3e} dB: {'PASS' if ok else 'FAIL'}",
          file=sys.stderr)
    return EXIT_OK if ok else EXIT_DATA


def cmd_serve(args) -> int:
    from .predictor import SurrogateConfig
    from .service import serve

    cfg = _load_config(args.config)
    serve(args.bind, SurrogateConfig.from_dict(cfg.get("surrogate")))
    return EXIT_OK


def cmd_make_bank(args) -> int:
    from .maskers import write_synthetic_bank

    print(write_synthetic_bank(args.out, seed=args.seed))
    return EXIT_OK


def cmd_make_ambient(args) -> int:
    from .acoustics import write_wav
    from .simulator import synthetic_ambient

    w = synthetic_ambient(args.duration, args.rate, args.laeq, args.seed, channels=args.channels)
    write_wav(args.out, w)
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amss", description=__doc__.splitlines()[0].strip("`"))
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="select maskers over an ambient recording and render the augmented session")
    s.add_argument("--manifest", required=True, help="masker manifest CSV")
    s.add_argument("--ambient", required=True, help="ambient WAV recording")
    s.add_argument("--duration", type=float, default=None, help="seconds to simulate (default: whole file)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--interval", type=float, default=None, help="selection interval in s (default 30)")
    s.add_argument("--predictor", default=None,
                   help="'local' or a service URL (default: $AMSS_PREDICTOR_URL, else local)")
    s.add_argument("--timeout", type=float, default=5.0, help="remote predictor timeout in s")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", default=None, help="JSON config with policy/surrogate/layout sections")
    s.add_argument("--session-id", default=None)
    s.add_argument("--site", default=None)
    s.add_argument("--condition", default=None)
    s.add_argument("--calibration", type=float, default=94.0, help="dB SPL of a full-scale sine")
    s.add_argument("--crossfade", type=float, default=0.5, help="crossfade between intervals in s")
    s.add_argument("--laf-step", type=float, default=0.1)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("metrics", help="LAeq, LCeq, N95 and the LAF series of a recording")
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--calibration", type=float, default=94.0, help="dB SPL of a full-scale sine")
    m.add_argument("--step", type=float, default=0.1, help="LAF sampling step in s")
    m.add_argument("--out", default=None, help="also write JSON, CSV and figure to this directory")
    m.add_argument("--no-plots", action="store_true")
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("analyze", help="survey contrasts and selection statistics")
    asub = a.add_subparsers(dest="target", required=True, parser_class=_Parser)
    sv = asub.add_parser(
        "survey",
        help="descriptive contrasts by site and condition",
        description="Means, SDs and percent-scale changes by site and condition, plus a "
                    "Holm-adjusted Kendall tau-b matrix. Descriptive only: mixed-effects "
                    "(rank-transformed) repeated-measures ANOVA is not performed.",
    )
    sv.add_argument("--csv", required=True)
    sv.add_argument("--out", default=None)
    sv.add_argument("--no-plots", action="store_true")
    sv.set_defaults(func=cmd_analyze_survey)
    lg = asub.add_parser("logs", help="masker selection frequencies across session logs")
    lg.add_argument("--glob", required=True, help="glob of session .jsonl logs")
    lg.add_argument("--out", default=None)
    lg.add_argument("--no-plots", action="store_true")
    lg.set_defaults(func=cmd_analyze_logs)

    c = sub.add_parser("calib", help="calibration table tools")
    csub = c.add_subparsers(dest="target", required=True, parser_class=_Parser)
    cc = csub.add_parser("check", help="round-trip interpolation check of a calibration table")
    cc.add_argument("--table", required=True)
    cc.add_argument("--step", type=float, default=0.5)
    cc.add_argument("--tolerance", type=float, default=0.05)
    cc.set_defaults(func=cmd_calib_check)

    sv = sub.add_parser("serve", help="run the HTTP prediction service")
    sv.add_argument("--bind", default="127.0.0.1:8765")
    sv.add_argument("--config", default=None)
    sv.set_defaults(func=cmd_serve)

    mb = sub.add_parser("make-bank", help="write a synthetic masker bank (demo/testing)")
    mb.add_argument("--out", required=True)
    mb.add_argument("--seed", type=int, default=0)
    mb.set_defaults(func=cmd_make_bank)

    ma = sub.add_parser("make-ambient", help="write a synthetic traffic-like ambient recording")
    ma.add_argument("--out", required=True)
    ma.add_argument("--duration", type=float, default=600.0)
    ma.add_argument("--rate", type=float, default=32000.0)
    ma.add_argument("--laeq", type=float, default=64.0)
    ma.add_argument("--channels", type=int, default=1)
    ma.add_argument("--seed", type=int, default=0)
    ma.set_defaults(func=cmd_make_ambient)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.ERROR, logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 3)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and level > logging.WARNING:
        # fallback warnings matter for simulate even when quiet
        logging.getLogger("amss.predictor").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"amss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"amss: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
