"""Command-line entry point for the full workflow.

Subcommands: gen-data, train, eval, inspect, bench, grad-check. Config
comes from a flat ``key = value`` file (--config) overridden by flags; the
effective config is echoed before the run. Exit codes: 0 success, 1 usage
or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bridge import BridgeModel
from .config import build_config
from .data import (
    gen_toy_task,
    load_jsonl,
    save_checkpoint,
    save_jsonl,
    shift_script,
    load_checkpoint,
)
from .errors import ConfigError, ContractError, SchemaError
from .evalbench import evaluate_accuracy, inspect_layer_weights, latency_bench, latency_csv
from .gradcheck import GRAD_TOL, run_grad_check
from .trainer import train
from .vocab import default_vocab, load_vocab, write_vocab

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--L", type=int, dest="L")
    p.add_argument("--d", type=int, dest="d")
    p.add_argument("--d-prime", type=int, dest="d_prime")
    p.add_argument("--V", type=int, dest="V")
    p.add_argument("--max-t", type=int, dest="max_T")
    p.add_argument("--heads", type=int, dest="heads")
    p.add_argument("--fusion", dest="fusion_mode", choices=["last", "global", "tokenwise"])
    p.add_argument("--base-temp", type=float, dest="base_temp")
    p.add_argument("--factor", type=float, dest="factor")
    p.add_argument("--temp-init", type=float, dest="temp_init")
    p.add_argument("--tau-override", type=float, dest="tau_override")
    p.add_argument("--include-embedding-layer", dest="include_embedding_layer",
                   action="store_const", const=True)
    p.add_argument("--loss-reduction", dest="loss_reduction", choices=["mean", "sum"])
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--lr", type=float, dest="lr_base")
    p.add_argument("--batch", type=int, dest="batch")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--precision", dest="precision", choices=["f32", "f64"])
    p.add_argument("--grad-clip", type=float, dest="grad_clip")


_CONFIG_KEYS = ("L", "d", "d_prime", "V", "max_T", "heads", "fusion_mode", "base_temp",
                "factor", "temp_init", "tau_override", "include_embedding_layer",
                "loss_reduction", "epochs", "lr_base", "batch", "seed", "precision",
                "grad_clip")


def _build_config(args):
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
    cfg = build_config(args.config, overrides)
    print(cfg.echo())
    return cfg


def _load_vocab(args, cfg):
    if getattr(args, "vocab", None):
        return load_vocab(args.vocab)
    return default_vocab(cfg.V)


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    vocab = default_vocab(cfg.V)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_vocab(out / "vocab.txt", vocab)
    train_examples = gen_toy_task(args.kind, args.n, cfg.seed, vocab, out / "train.jsonl")
    eval_examples = gen_toy_task(args.kind, args.n_eval, cfg.seed + 1, vocab, out / "eval.jsonl")
    written = ["vocab.txt", "train.jsonl", "eval.jsonl"]
    if args.kind in ("xnli-like", "tagmap"):
        save_jsonl(out / "eval_shifted.jsonl", shift_script(eval_examples, vocab))
        written.append("eval_shifted.jsonl")
    print(f"wrote {', '.join(written)} to {out} "
          f"({len(train_examples)} train / {len(eval_examples)} eval examples)")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    vocab = _load_vocab(args, cfg)
    dataset = load_jsonl(args.data)
    model = BridgeModel(cfg, vocab=vocab)
    log = train(model, dataset, cfg)
    save_checkpoint(model, args.out)
    written = [str(args.out)]
    if args.log:
        log_path = Path(args.log)
        log_path.write_text(log.to_csv(), encoding="utf-8")
        summary_path = log_path.with_suffix(".txt")
        if summary_path == log_path:
            summary_path = Path(str(log_path) + ".summary")
        summary_path.write_text(log.summary_text(cfg), encoding="utf-8")
        written += [str(log_path), str(summary_path)]
    print(f"trained {len(log.steps)} steps; wrote {', '.join(written)}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    model = load_checkpoint(args.checkpoint, vocab=_load_vocab(args, cfg) if args.vocab else None)
    dataset = load_jsonl(args.data)
    labels = args.labels.split(",") if args.labels else sorted({ex.target for ex in dataset})
    report = evaluate_accuracy(model, dataset, labels)
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    print(report.summary_text(), end="")
    return 0


def cmd_inspect(args) -> int:
    cfg = _build_config(args)
    model = load_checkpoint(args.checkpoint, vocab=_load_vocab(args, cfg) if args.vocab else None)
    probe = load_jsonl(args.probe) if args.probe else None
    csv = inspect_layer_weights(model, probe)
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(csv, end="")
    return 0


def cmd_bench(args) -> int:
    cfg = _build_config(args)
    if args.data:
        example = load_jsonl(args.data)[0]
    else:
        example = gen_toy_task("xnli-like", 1, cfg.seed, default_vocab(cfg.V))[0]
    reports = latency_bench(cfg, example, reps=args.reps, warmup=args.warmup)
    csv = latency_csv(reports)
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
    print(csv, end="")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _build_config(args)
    results = run_grad_check(cfg.seed, n_examples=args.examples, eps=args.eps)
    worst_name = max(results, key=results.get)
    worst = results[worst_name]
    for name in sorted(results):
        print(f"{name}: {results[name]:.3e}")
    print(f"max relative gradient error = {worst:.3e} ({worst_name})")
    if worst > GRAD_TOL:
        print(f"FAIL: exceeds {GRAD_TOL:.0e}", file=sys.stderr)
        return RUNTIME_EXIT
    print(f"OK: within {GRAD_TOL:.0e}")
    return 0


def make_parser() -> _Parser:
    parser = _Parser(prog="layerbridge",
                     description="Depth-wise encoder-layer fusion bridge: data, training, "
                                 "evaluation, inspection, benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a toy task split and vocabulary")
    _config_flags(p)
    p.add_argument("--kind", required=True, choices=["copy", "tagmap", "xnli-like"])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=500)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train fusion + projection on a JSONL dataset")
    _config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="label-scoring accuracy of a checkpoint")
    _config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--labels", help="comma-separated; defaults to the dataset's targets")
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="export learned layer weights as CSV")
    _config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe", help="probe JSONL (required for token-wise checkpoints)")
    p.add_argument("--vocab")
    p.add_argument("--out", help="CSV path (default: print)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="per-token forward latency across fusion modes")
    _config_flags(p)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--data", help="JSONL whose first example is timed")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grad-check", help="bridge gradients vs finite differences (f64)")
    _config_flags(p)
    p.add_argument("--examples", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)

    return parser


def cli_main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (OSError, ValueError, ContractError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
