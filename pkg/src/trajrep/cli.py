"""Command-line front end over the pipeline stages.

Exit codes: 0 success, 2 usage error, 3 data error (missing, corrupt, or
would-overwrite inputs), 4 numerical failure (training diverged).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .analysis import MineConfig
from .heads import HeadConfig
from .pipeline import (PipelineConfig, StageError, compact_pipeline_config,
                       run_pipeline, stage_ablate_granularity,
                       stage_analyze_attention, stage_analyze_nmi,
                       stage_analyze_separation, stage_extract, stage_gen_data,
                       stage_report, stage_train_head, stage_train_repr)
from .tensor import NonFiniteError
from .training import ReprConfig, TrainingDiverged

# accepted on the command line; "rnn" is the recurrent head's public name
HEAD_NAMES = {"mlp": "mlp", "rnn": "gru", "gru": "gru", "attn": "attn"}


class UsageError(ValueError):
    pass


def _ints(text):
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got '{text}'")


def _say(msg):
    print(msg, flush=True)


def _repr_progress(it, row):
    _say(f"  iter {row[0]:>6d}  dsm {row[1]:.3f}  reg {row[2]:.6f}  "
         f"total {row[3]:.3f}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="trajrep",
        description="train trajectory representations, extract codes, "
                    "fit heads, and analyze them")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a dataset")
    g.add_argument("--out", required=True, help="run directory")
    g.add_argument("--kind", default="synthetic", choices=("synthetic", "digits"))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true",
                   help="overwrite an existing dataset of the same name")

    t = sub.add_parser("train-repr", help="train encoder + score net")
    t.add_argument("--run", required=True)
    t.add_argument("--data", required=True, help="dataset .npz")
    t.add_argument("--mode", default="drl", choices=("drl", "vdrl"))
    t.add_argument("--latent-dim", type=int, default=128)
    t.add_argument("--iterations", type=int, default=3000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ablated", action="store_true",
                   help="train the unconditioned baseline (no encoder)")
    t.add_argument("--tag", default="", help="artifact filename prefix")

    e = sub.add_parser("extract", help="read codes over the time grid")
    e.add_argument("--run", required=True)
    e.add_argument("--encoder", required=True, help="encoder .trrp")
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--tag", default="")

    h = sub.add_parser("train-head", help="train a downstream head on codes")
    h.add_argument("--run", required=True)
    h.add_argument("--codes", required=True, help="trajectory cache .trjc")
    h.add_argument("--data", required=True)
    h.add_argument("--head", required=True, choices=sorted(HEAD_NAMES))
    h.add_argument("--task", required=True)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--epochs", type=int, default=20)
    h.add_argument("--test-codes", default=None)
    h.add_argument("--test-data", default=None)
    h.add_argument("--tag", default="")

    a = sub.add_parser("analyze", help="information and relevance analyses")
    a.add_argument("--run", required=True)
    a.add_argument("--what", required=True,
                   choices=("nmi", "attention", "jsd", "separation"))
    a.add_argument("--codes", required=True)
    a.add_argument("--heads", nargs="*", default=[], metavar="TASK=PATH",
                   help="attention-head checkpoints (for attention/jsd)")
    a.add_argument("--mine-iterations", type=int, default=None)
    a.add_argument("--subset", type=int, default=2048)
    a.add_argument("--tag", default="")

    ab = sub.add_parser("ablate-granularity",
                        help="head accuracy across grid granularities")
    ab.add_argument("--run", required=True)
    ab.add_argument("--encoder", required=True)
    ab.add_argument("--data", required=True)
    ab.add_argument("--test-data", required=True)
    ab.add_argument("--ks", type=_ints, default=(2, 5, 10))
    ab.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    ab.add_argument("--head", default="attn", choices=sorted(HEAD_NAMES))
    ab.add_argument("--tasks", nargs="*", default=None)
    ab.add_argument("--epochs", type=int, default=20)
    ab.add_argument("--tag", default="")

    r = sub.add_parser("report", help="index artifacts across runs")
    r.add_argument("--out", required=True)
    r.add_argument("--runs", nargs="*", default=[],
                   help="run directories to collate")

    pl = sub.add_parser("pipeline", help="all stages end to end")
    pl.add_argument("--run", required=True)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--preset", default="full", choices=("full", "compact"))

    return p


def _parse_heads(pairs):
    heads = {}
    for pair in pairs:
        task, sep, path = pair.partition("=")
        if not sep or not task or not path:
            raise UsageError(f"expected TASK=PATH, got '{pair}'")
        heads[task] = path
    return heads


def _cmd(args):
    if args.command == "gen-data":
        out = stage_gen_data(args.out, args.kind, args.n, args.seed,
                             force=args.force)
        _say(f"wrote {out['dataset']}")
        return

    if args.command == "train-repr":
        config = ReprConfig(mode=args.mode, latent_dim=args.latent_dim,
                            iterations=args.iterations,
                            batch_size=args.batch_size, lr=args.lr,
                            conditioned=not args.ablated)
        out = stage_train_repr(args.run, args.data, config, args.seed,
                               tag=args.tag, progress=_repr_progress)
        s = out["summary"]
        _say(f"final smoothed loss {s['final_smoothed']:.3f}  "
             f"({'conditioned' if s['conditioned'] else 'ablated'}, {s['mode']})")
        return

    if args.command == "extract":
        out = stage_extract(args.run, args.encoder, args.data, args.k,
                            tag=args.tag)
        _say(f"wrote {out['codes']}")
        return

    if args.command == "train-head":
        if (args.test_codes is None) != (args.test_data is None):
            raise UsageError("--test-codes and --test-data go together")
        config = HeadConfig(kind=HEAD_NAMES[args.head], epochs=args.epochs)
        out = stage_train_head(args.run, args.codes, args.data,
                               HEAD_NAMES[args.head], args.task, config,
                               args.seed, test_codes_path=args.test_codes,
                               test_data_path=args.test_data, tag=args.tag)
        m = out["metrics"]
        line = f"{m['kind']}/{m['task']}: val {m['val_acc']:.4f} (lr {m['best_lr']:g})"
        if m["test_acc"] is not None:
            line += f"  test {m['test_acc']:.4f}"
        _say(line)
        return

    if args.command == "analyze":
        if args.what == "nmi":
            mine = MineConfig()
            if args.mine_iterations:
                mine = MineConfig(iterations=args.mine_iterations)
            out = stage_analyze_nmi(args.run, args.codes, mine,
                                    subset=args.subset, tag=args.tag)
            bc = out["summary"]["band_contrast"]
            _say("band contrast " + (f"{bc:.4f}" if bc is not None
                                     else "n/a (grid too small)"))
        elif args.what in ("attention", "jsd"):
            heads = _parse_heads(args.heads)
            if not heads:
                raise UsageError(f"--what {args.what} needs --heads TASK=PATH ...")
            out = stage_analyze_attention(args.run, heads, args.codes,
                                          tag=args.tag)
            _say(f"profiles over tasks: {', '.join(out['tasks'])}")
        else:
            out = stage_analyze_separation(args.run, args.codes, tag=args.tag)
            st = out["stats"]
            _say(f"mean d0 {st['d0'].mean():.4f}  mean dsup {st['dsup'].mean():.4f}  "
                 f"violations {st['violations']}")
        return

    if args.command == "ablate-granularity":
        config = HeadConfig(kind=HEAD_NAMES[args.head], epochs=args.epochs)
        out = stage_ablate_granularity(
            args.run, args.encoder, args.data, args.test_data, args.ks,
            config, args.seeds, tasks=args.tasks,
            kind=HEAD_NAMES[args.head], tag=args.tag)
        _say(f"wrote {out['csv']}")
        return

    if args.command == "report":
        if not args.runs:
            raise UsageError("report needs at least one run directory")
        out = stage_report(args.out, args.runs)
        _say(f"wrote {out['index']}")
        return

    if args.command == "pipeline":
        config = compact_pipeline_config() if args.preset == "compact" \
            else PipelineConfig()
        out = run_pipeline(args.run, args.seed, config, progress=_say)
        _say(json.dumps({"final_smoothed": out["repr"]["final_smoothed"],
                         "band_contrast": out["nmi"]["band_contrast"]},
                        indent=2))
        return

    raise UsageError(f"unknown command {args.command}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _cmd(args)
        return 0
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (StageError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
