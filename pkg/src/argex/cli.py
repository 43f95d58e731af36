"""Command-line entry point: ``argex <subcommand> [options]``.

Exit status is 0 on success, 2 on usage errors (argparse) and 1 when input
validation or a pipeline stage fails.
"""
from __future__ import annotations

import os

# One process, one core unless the caller says otherwise; must precede numpy.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import logging
import subprocess
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__

log = logging.getLogger("argex")

ABLATION_ROWS = [
    ("base", dict(use_ti=False, use_tt=False, use_te=False, use_aux=False, use_dhead=False)),
    ("+TI", dict(use_ti=True, use_tt=False, use_te=False, use_aux=False, use_dhead=False)),
    ("+TI+TT", dict(use_ti=True, use_tt=True, use_te=False, use_aux=False, use_dhead=False)),
    ("+TI+TT+TE", dict(use_ti=True, use_tt=True, use_te=True, use_aux=False, use_dhead=False)),
    ("+auxiliary", dict(use_ti=True, use_tt=True, use_te=True, use_aux=True, use_dhead=False)),
    ("+syntax", dict(use_ti=True, use_tt=True, use_te=True, use_aux=True, use_dhead=True)),
]


def version_string() -> str:
    """Package version, suffixed with the short commit id when run from a git checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if sha.returncode == 0 and sha.stdout.strip():
            return f"{__version__}+g{sha.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# config handling


def parse_override(text: str):
    if "=" not in text:
        raise ValueError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config_dict(args) -> dict:
    d = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            d = json.load(f)
        if not isinstance(d, dict):
            raise ValueError(f"{args.config}: config must be a flat JSON object")
    for item in args.set or []:
        k, v = parse_override(item)
        d[k] = v
    return d


def train_config(args):
    from .training import TrainConfig

    d = load_config_dict(args)
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "mode", None):
        d["mode"] = args.mode
    cfg = TrainConfig.from_dict(d)
    cfg.validate()
    return cfg


def write_run_info(out: Path, config_hash: str, seed: int, **extra):
    out.mkdir(parents=True, exist_ok=True)
    info = {"config_hash": config_hash, "seed": seed, "version": version_string(), **extra}
    (out / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _config_hash(d: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def _load_init(path):
    """Vocabulary and embedder parameters from a ``pretrain`` output directory."""
    from . import tensor as T
    from .embedder import Vocabulary

    if path is None:
        return None, None
    d = Path(path)
    arrays, _ = T.read_checkpoint(d / "embedder.ckpt")
    return Vocabulary.load(d / "vocab.txt"), arrays


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args):
    from .data import write_corpus
    from .synth import GenConfig, generate_synthetic, split_by_document

    d = load_config_dict(args)
    names = {f.name for f in fields(GenConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        from .errors import ConfigError

        raise ConfigError(f"unknown generator keys: {unknown}")
    cfg = GenConfig(**d)
    seed = 0 if args.seed is None else args.seed
    corpus = generate_synthetic(cfg, seed=seed)
    train, dev = split_by_document(corpus.gold, dev_fraction=args.dev_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "train.jsonl", train, corpus.schema)
    write_corpus(out / "dev.jsonl", dev, corpus.schema)
    write_corpus(out / "pool.jsonl", corpus.pool, corpus.schema)
    write_run_info(out, _config_hash(asdict(cfg)), seed, command="gen-synth", config=asdict(cfg))
    print(f"wrote {len(train)} train / {len(dev)} dev / {len(corpus.pool)} pool sentences to {out}")


def cmd_pretrain(args):
    from . import tensor as T
    from .data import parse_corpus
    from .embedder import pretrain_mlm
    from .model import EAEModel
    from .training import build_vocab

    cfg = train_config(args)
    pool, schema = parse_corpus(args.pool)
    extra = []
    for p in args.train or []:
        extra.extend(parse_corpus(p)[0])
    vocab = build_vocab(pool + extra)
    model = EAEModel(cfg.model_config(), schema, vocab, seed=cfg.seed)
    result = pretrain_mlm(model.embedder, model.store, vocab, [r.tokens for r in pool],
                          steps=cfg.pretrain_steps, lr=cfg.pretrain_lr,
                          batch_size=cfg.pretrain_batch_size, seed=cfg.seed,
                          next_sentence=cfg.next_sentence)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    sub = T.ParameterStore()
    for name in model.store.names():
        if name.startswith("embedder."):
            sub.add(name, model.store[name].data)
    T.save_checkpoint(out / "embedder.ckpt", sub, {"train_config": asdict(cfg)})
    (out / "pretrain.json").write_text(json.dumps(result.to_json()) + "\n")
    write_run_info(out, cfg.config_hash(), cfg.seed, command="pretrain")
    first, last = result.losses[0], sum(result.losses[-20:]) / len(result.losses[-20:])
    print(f"pretrained {result.steps} steps: masked-token loss {first:.3f} -> {last:.3f}")


def cmd_train(args):
    from .data import parse_corpus
    from .model import EAEModel
    from .training import build_vocab, train

    cfg = train_config(args)
    train_recs, schema = parse_corpus(args.train)
    dev_recs, _ = parse_corpus(args.dev)
    vocab, init = _load_init(args.init_embedder)
    vocab = vocab or build_vocab(train_recs)
    model = EAEModel(cfg.model_config(), schema, vocab, seed=cfg.seed)
    if init:
        model.store.load_state({**model.store.state(), **init})
    out = Path(args.out)
    write_run_info(out, cfg.config_hash(), cfg.seed, command="train")
    model, run = train(train_recs, dev_recs, cfg, schema, model=model, out_dir=out)
    (out / "run_record.json").write_text(json.dumps(run.to_json(), indent=1) + "\n")
    print(f"best dev RC-F1 {run.best_rc_f1:.4f} at epoch {run.best_epoch} ({run.wall_time:.1f}s)")


def cmd_selftrain(args):
    from .data import parse_corpus
    from .training import build_vocab, self_train

    cfg = train_config(args)
    train_recs, schema = parse_corpus(args.train)
    dev_recs, _ = parse_corpus(args.dev)
    pool, _ = parse_corpus(args.pool)
    vocab, init = _load_init(args.init_embedder)
    vocab = vocab or build_vocab(train_recs + pool)
    out = Path(args.out)
    write_run_info(out, cfg.config_hash(), cfg.seed, command="selftrain")
    model, rec = self_train(train_recs, dev_recs, pool, cfg, schema, vocab=vocab,
                            out_dir=out, init_state=init)
    model.save(out / "model", {"train_config": asdict(cfg)})
    (out / "run_record.json").write_text(json.dumps(rec.to_json(), indent=1) + "\n")
    for stage, run in rec.stages.items():
        if hasattr(run, "best_rc_f1"):
            print(f"{stage:>12}: best dev RC-F1 {run.best_rc_f1:.4f} at epoch {run.best_epoch}")
        else:
            print(f"{stage:>12}: {run['n_events']} events, {run['n_arguments']} arguments "
                  f"on {run['n_sentences']} sentences")


def cmd_predict(args):
    from .data import parse_corpus
    from .evaluation import write_predictions
    from .model import EAEModel
    from .training import predict

    model = EAEModel.load(args.model)
    records, _ = parse_corpus(args.input)
    threshold = args.threshold
    preds = predict(model, records, trigger_source=args.trigger_source, threshold=threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.jsonl", preds)
    _, meta = _read_meta(Path(args.model))
    tc = meta.get("train_config", {})
    write_run_info(out, _config_hash(tc), meta.get("seed", 0), command="predict",
                   trigger_source=args.trigger_source)
    print(f"wrote {len(preds)} prediction lines to {out / 'predictions.jsonl'}")


def _read_meta(model_dir: Path):
    from . import tensor as T

    return T.read_checkpoint(model_dir / "model.ckpt")


def cmd_eval(args):
    from .data import parse_corpus
    from .evaluation import read_predictions, score

    gold, _ = parse_corpus(args.gold)
    report = score(read_predictions(args.pred), gold, match=args.match)
    print(report.to_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=1) + "\n")


def cmd_ablate(args):
    import numpy as np

    from .data import parse_corpus
    from .synth import LONG_RANGE, generate_synthetic, split_by_document
    from .training import build_vocab, train

    base = train_config(args)
    if args.train and args.dev:
        train_recs, schema = parse_corpus(args.train)
        dev_recs, _ = parse_corpus(args.dev)
    elif args.train or args.dev:
        raise ValueError("ablate needs both --train and --dev, or neither (long-range synthetic corpus)")
    else:
        corpus = generate_synthetic(LONG_RANGE, seed=0)
        train_recs, dev_recs = split_by_document(corpus.gold, 0.2)
        schema = corpus.schema
    vocab = build_vocab(train_recs)
    rows = []
    for name, switches in ABLATION_ROWS:
        ai, rc = [], []
        for k in range(args.seeds):
            cfg = base.replace(seed=base.seed + k, **switches)
            model, run = train(train_recs, dev_recs, cfg, schema, vocab=vocab)
            best = run.epochs[run.best_epoch - 1]
            ai.append(best.ai_f1)
            rc.append(best.rc_f1)
            log.info("%s seed %d: RC-F1 %.4f", name, cfg.seed, best.rc_f1)
        rows.append({"row": name, "ai_f1": float(np.mean(ai)), "rc_f1": float(np.mean(rc)),
                     "rc_f1_per_seed": rc})
    print(f"{'model':<12} {'AI-F1':>7} {'RC-F1':>7}   (mean over {args.seeds} seeds)")
    for r in rows:
        print(f"{r['row']:<12} {100 * r['ai_f1']:7.2f} {100 * r['rc_f1']:7.2f}")
    if args.out:
        out = Path(args.out)
        write_run_info(out, base.config_hash(), base.seed, command="ablate", seeds=args.seeds)
        (out / "ablation.json").write_text(json.dumps(rows, indent=1) + "\n")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="argex", description="Event argument extraction toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (value parsed as JSON when possible)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    common(sp)
    sp.add_argument("--dev-fraction", type=float, default=0.2)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("pretrain", help="masked-token pretraining of the embedder")
    common(sp)
    sp.add_argument("--pool", required=True, help="unlabeled corpus (JSONL)")
    sp.add_argument("--train", action="append", help="extra corpus whose tokens join the vocabulary")
    sp.set_defaults(func=cmd_pretrain)

    for name, func, helptext in (("train", cmd_train, "supervised training on gold data"),
                                 ("selftrain", cmd_selftrain, "gold -> silver -> fine-tune")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--train", required=True)
        sp.add_argument("--dev", required=True)
        if name == "selftrain":
            sp.add_argument("--pool", required=True)
        sp.add_argument("--mode", choices=["entities", "plain"])
        sp.add_argument("--init-embedder", help="output directory of a pretrain run")
        sp.set_defaults(func=func)

    sp = sub.add_parser("predict", help="predict arguments for a corpus")
    sp.add_argument("--model", required=True, help="model directory")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trigger-source", choices=["gold", "tagger"], default="gold")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="score predictions against gold")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--match", choices=["exact", "head"], default="exact")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="ablation table, mean over seeds")
    common(sp, out_required=False)
    sp.add_argument("--train")
    sp.add_argument("--dev")
    sp.add_argument("--mode", choices=["entities", "plain"])
    sp.add_argument("--seeds", type=int, default=5)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    from .errors import ArgexError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ArgexError, ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"argex {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
