"""Command line entry point: ``kinn run | plot | validate-data``."""

from __future__ import annotations

import argparse
import logging
import sys

from kinn.dataset import DataError, load_series, plan_sessions
from kinn.experiment import ConfigError, emit_plot_data, load_config, run_experiment

EXIT_CONFIG = 2
EXIT_DATA = 3


def _run_parser(sub):
    p = sub.add_parser("run", help="train and evaluate paired baseline/KINN models")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data")
    p.add_argument("--architectures", help="comma list, e.g. kgate:norm,mlp_relu")
    p.add_argument("--normalize", help="per-architecture map, e.g. kgate:true,rbf:true")
    p.add_argument("--arms", choices=["baseline", "kinn", "both"])
    p.add_argument("--t-p", dest="t_p", type=int)
    p.add_argument("--t-f", dest="t_f", type=int)
    p.add_argument("--session-len", dest="session_len", type=int)
    p.add_argument("--train-obs", dest="train_obs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--velocity-supervision", dest="velocity_supervision",
                   action="store_const", const=True)
    p.add_argument("--kin-weight", dest="kin_weight", type=float)
    p.add_argument("--pooling", choices=["days", "windows"])
    p.add_argument("--sessions", help="comma list of session indexes to run (default: all)")


def cmd_run(args) -> int:
    keys = ["data", "architectures", "normalize", "arms", "t_p", "t_f", "session_len",
            "train_obs", "epochs", "batch_size", "lr", "seed", "output_dir", "jobs",
            "velocity_supervision", "kin_weight", "pooling", "sessions"]
    overrides = {k: getattr(args, k) for k in keys}
    cfg = load_config(args.config, overrides)
    cfg.validate()
    paths = run_experiment(cfg)
    for t in paths["tables"]:
        print(f"{t.model:<20} ANN {t.mean_ann:.5f} ± {t.std_ann:.5f}   "
              f"KINN {t.mean_kinn:.5f} ± {t.std_kinn:.5f}   p={t.wilcoxon_p:.5f}"
              + (f"   [{'; '.join(t.flags)}]" if t.flags else ""))
    print(f"results written to {paths['summary'].parent}")
    return 0


def cmd_plot(args) -> int:
    out = emit_plot_data(args.run_dir, args.architecture, args.arm, args.output)
    print(out)
    return 0


def cmd_validate(args) -> int:
    frame = load_series(args.path, args.session_len)
    plans = plan_sessions(frame, args.session_len, args.t_p, args.t_f, args.train_obs)
    print(f"{len(frame)} rows, {frame.dates[0]} .. {frame.dates[-1]}")
    print(f"{len(frame) // args.session_len} full sessions, {len(plans)} train/test session pairs")
    if plans:
        print(f"{plans[0].train_obs} training windows and {plans[0].test_window_count} "
              "test windows per session")
    return 0 if plans else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _run_parser(sub)

    p = sub.add_parser("plot", help="concatenate test traces into one plot CSV")
    p.add_argument("run_dir")
    p.add_argument("architecture", help="model label (e.g. kgate_norm) or bare architecture")
    p.add_argument("arm", choices=["baseline", "kinn"])
    p.add_argument("-o", "--output")

    p = sub.add_parser("validate-data", help="check a date,value CSV and report sessions")
    p.add_argument("path")
    p.add_argument("--session-len", dest="session_len", type=int, default=120)
    p.add_argument("--t-p", dest="t_p", type=int, default=30)
    p.add_argument("--t-f", dest="t_f", type=int, default=30)
    p.add_argument("--train-obs", dest="train_obs", type=int, default=30)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "plot": cmd_plot, "validate-data": cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
