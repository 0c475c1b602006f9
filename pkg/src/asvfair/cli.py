"""Command-line surface.

Subcommands: eval (score-file fairness report), train-toy (deterministic
toy training run), gradcheck (finite-difference suite), gate-demo (routing
mask inspection), sweep (threshold sweep export).

Exit codes: 0 success, 1 a check failed, 2 input error, 3 evaluation
protocol error, 4 numerical failure. Failures print one line to stderr of
the form `error: <category>: <message>`.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as io_mod
from .autodiff import AutodiffError, Tensor
from .gradcheck import gradcheck_all
from .metrics import EvaluationProtocolError, ReportConfig, fairness_report
from .trainer import DivergenceError, TrainConfig, load_config, load_params, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_PROTOCOL = 3
EXIT_NUMERIC = 4


def _fail(category, message, code):
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def _summary_line(report):
    eer_pct = 100.0 * report.eer
    dcf = report.min_dcf_normalized if report.config.normalized_dcf \
        else report.min_dcf_unnormalized
    garbe_txt = f"{report.garbe:.2f}" if report.garbe is not None else "n/a"
    return f"EER {eer_pct:.2f}%  minDCF {dcf:.4f}  GARBE {garbe_txt}"


def cmd_eval(args):
    trials = io_mod.read_score_file(args.scores)
    cfg = ReportConfig(alpha=args.alpha, fmr_target=args.fmr_target,
                       normalized_dcf=not args.unnormalized_dcf)
    report = fairness_report(trials, cfg)
    if args.report:
        io_mod.write_report(args.report, report.to_dict())
    print(_summary_line(report))
    return EXIT_OK


def cmd_sweep(args):
    from .metrics import sweep_rows

    trials = io_mod.read_score_file(args.scores)
    rows = sweep_rows(trials)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("tau,fmr,fnmr,dcf\n")
        for tau, fmr, fnmr, dcf in rows:
            fh.write(f"{tau!r},{fmr!r},{fnmr!r},{dcf!r}\n")
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return EXIT_OK


def cmd_train_toy(args):
    config = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    params, records = train(config, out_dir=args.out)
    final_eval = [r for r in records if r["kind"] == "eval"][-1]
    io_mod.write_report(os.path.join(args.out, "report_final.json"),
                        final_eval["report"])
    report = final_eval["report"]
    garbe = report["garbe"]
    garbe_txt = f"{garbe:.2f}" if garbe is not None else "n/a"
    print(f"finished {config.steps} steps: "
          f"EER {report['eer']['percent']:.2f}%  GARBE {garbe_txt}")
    return EXIT_OK


def cmd_gradcheck(args):
    reports = gradcheck_all(seed=args.seed, tolerance=args.tol,
                            inject_bug=args.inject_bug)
    width = max(len(r.op) for r in reports)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.op:<{width}}  {r.max_rel_err:.3e}  {status}")
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} ops passed "
          f"(tolerance {args.tol:g})")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def cmd_gate_demo(args):
    params = load_params(args.checkpoint)
    feats = io_mod.read_feature_file(args.utterance)
    if feats.shape[0] != params.config.feature_bins:
        raise io_mod.ConfigError(
            f"utterance has {feats.shape[0]} bins, checkpoint expects "
            f"{params.config.feature_bins}")
    from .gate import compute_mask
    from .model import encode

    u = encode(Tensor(feats[None, :, :]), params.encoder)
    mask = compute_mask(u, params.gate).data[0]  # [C,T]
    print(f"routing mask, {mask.shape[0]} channels x {mask.shape[1]} frames:")
    for row in mask:
        print(" ".join(f"{v:.6f}" for v in row))
    abar = float(mask.mean())
    near_binary = float((mask * (1.0 - mask) < 0.05).mean())
    print(f"abar {abar:.6f}")
    print(f"near_binary_fraction {near_binary:.6f}")
    print("channel_means " + " ".join(f"{v:.6f}" for v in mask.mean(axis=1)))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="asvfair",
        description="gated fair speaker-embedding toolkit: evaluation, "
                    "toy training, gradient checking")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("eval", help="fairness report from a score file")
    pe.add_argument("--scores", required=True)
    pe.add_argument("--alpha", type=float, default=0.5)
    pe.add_argument("--fmr-target", type=float, default=0.01)
    pe.add_argument("--report", default=None)
    pe.add_argument("--unnormalized-dcf", action="store_true")
    pe.set_defaults(fn=cmd_eval)

    pt = sub.add_parser("train-toy", help="deterministic toy training run")
    pt.add_argument("--config", default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--out", required=True)
    pt.set_defaults(fn=cmd_train_toy)

    pg = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--tol", type=float, default=1e-4)
    pg.add_argument("--inject-bug", action="store_true",
                    help=argparse.SUPPRESS)  # negative control, test-only
    pg.set_defaults(fn=cmd_gradcheck)

    pd = sub.add_parser("gate-demo", help="print the routing mask for one "
                                          "utterance")
    pd.add_argument("--checkpoint", required=True)
    pd.add_argument("--utterance", required=True)
    pd.set_defaults(fn=cmd_gate_demo)

    ps = sub.add_parser("sweep", help="export (tau, FMR, FNMR, DCF) rows")
    ps.add_argument("--scores", required=True)
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (io_mod.ScoreFileError, io_mod.ConfigError) as e:
        return _fail("input", str(e), EXIT_INPUT)
    except FileNotFoundError as e:
        return _fail("input", f"{e.filename}: not found", EXIT_INPUT)
    except EvaluationProtocolError as e:
        return _fail("protocol", str(e), EXIT_PROTOCOL)
    except DivergenceError as e:
        return _fail("numerical", str(e), EXIT_NUMERIC)
    except (AutodiffError, ValueError) as e:
        return _fail("input", str(e), EXIT_INPUT)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
