"""The ``maex`` command line.

Artifacts live under one workspace directory (``--out``, default ``run``)::

    corpus/raw.jsonl        written by synth (or supplied by the user)
    corpus/corpus.jsonl     preprocessed corpus
    catalogs/ splits/       written by preprocess
    checkpoints/<name>/     written by train / baseline
    reports/<name>.json     written by preprocess, eval, grid
    manifests/<step>.json   one reproducibility manifest per run
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from maex import __version__
from maex import config as cfgmod
from maex.data import (
    Catalogs,
    NormalizationRules,
    SplitSet,
    build_catalogs,
    corpus_stats,
    filter_pairs,
    normalize_attributes,
    read_corpus,
    select,
    select_top_attributes,
    split_dataset,
    write_corpus,
)
from maex.errors import ConfigError, MaexError, MissingArtifactError
from maex.harness import (
    Checkpoint,
    MostCommonModel,
    evaluate,
    evaluate_most_common,
    fit_most_common,
    format_listing,
    predict_topn,
    run_grid,
    train,
)
from maex.report import LABELS, MetricsReport
from maex.synth import SynthConfig, generate_synthetic

log = logging.getLogger("maex")

BASELINE = "most-common"


# --- workspace helpers -------------------------------------------------------------


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    raw = property(lambda self: self.root / "corpus" / "raw.jsonl")
    corpus = property(lambda self: self.root / "corpus" / "corpus.jsonl")
    catalogs = property(lambda self: self.root / "catalogs")
    splits = property(lambda self: self.root / "splits")
    checkpoints = property(lambda self: self.root / "checkpoints")
    reports = property(lambda self: self.root / "reports")
    manifests = property(lambda self: self.root / "manifests")

    def require(self, path, producer):
        if not Path(path).exists():
            raise MissingArtifactError(f"{path} not found; run `maex {producer} --out {self.root}` first")
        return Path(path)

    def load_prepared(self):
        corpus = read_corpus(self.require(self.corpus, "preprocess"))
        splits = SplitSet.read(self.require(self.splits, "preprocess"))
        catalogs = Catalogs.read(self.require(self.catalogs, "preprocess"))
        return corpus, splits, catalogs

    def checkpoint_dir(self, name):
        return self.require(self.checkpoints / name, "baseline" if name == BASELINE else "train")


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def write_manifest(ws, step, *, seed, config_hash, corpus, outputs, extra=None):
    """Record what produced this step's outputs. Deliberately timestamp-free."""
    data = {
        "step": step,
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash,
        "corpus_hash": file_hash(corpus) if corpus and Path(corpus).exists() else None,
        "outputs": sorted(str(Path(o).relative_to(ws.root)) for o in outputs),
    }
    if extra:
        data.update(extra)
    ws.manifests.mkdir(parents=True, exist_ok=True)
    path = ws.manifests / f"{step}.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_config(args):
    overrides = list(args.set or [])
    cfg = cfgmod.load_config(args.config, args.profile, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


# --- subcommands -----------------------------------------------------------------


def synth_config(args):
    sc = SynthConfig()
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        data = data.get("synth", data)
        for key, value in data.items():
            _set_synth(sc, key, value)
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        _set_synth(sc, key.strip().removeprefix("synth."), value)
    return sc.validate()


def _set_synth(sc, key, value):
    kinds = {f.name: type(getattr(sc, f.name)) for f in fields(sc)}
    if key not in kinds:
        raise ConfigError(f"unknown synth key {key!r}; known: {', '.join(kinds)}")
    try:
        setattr(sc, key, kinds[key](value))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def cmd_synth(args, ws):
    sc = synth_config(args)
    seed = 0 if args.seed is None else args.seed
    records = generate_synthetic(sc, seed)
    out = write_corpus(records, ws.raw)
    canon = json.dumps(sc.to_dict(), sort_keys=True).encode()
    write_manifest(ws, "synth", seed=seed, config_hash=hashlib.sha256(canon).hexdigest()[:16], corpus=out,
                   outputs=[out], extra={"synth": sc.to_dict()})
    print(f"wrote {len(records)} products to {out}")
    return 0


def cmd_preprocess(args, ws):
    source = Path(args.input) if args.input else ws.require(ws.raw, "synth")
    records = read_corpus(source)
    rules = NormalizationRules.from_file(args.rules) if args.rules else NormalizationRules([])
    records = normalize_attributes(records, rules)
    records = filter_pairs(records, args.min_attr, args.min_value, args.dominance, fixed_point=args.fixed_point)
    records = select_top_attributes(records, args.top)
    seed = 0 if args.seed is None else args.seed
    splits = split_dataset(records, seed=seed)
    catalogs = build_catalogs(select(records, splits.train))

    corpus = write_corpus(records, ws.corpus)
    splits.write(ws.splits)
    catalogs.write(ws.catalogs)
    stats = corpus_stats(records)
    stats["flagged products"] = sum(r.flagged for r in records)
    stats["split sizes"] = {"train": len(splits.train), "validation": len(splits.validation), "test": len(splits.test)}
    ws.reports.mkdir(parents=True, exist_ok=True)
    summary = ws.reports / "summary.json"
    summary.write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    settings = {
        "input_hash": file_hash(source),
        "rules": [[p.pattern, c] for p, c in rules.rules],
        "min_attr": args.min_attr,
        "min_value": args.min_value,
        "dominance": args.dominance,
        "top": args.top,
        "fixed_point": args.fixed_point,
    }
    chash = hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:16]
    write_manifest(ws, "preprocess", seed=seed, config_hash=chash, corpus=corpus,
                   outputs=[corpus, ws.splits, ws.catalogs, summary], extra={"settings": settings})
    width = max(len(k) for k in stats)
    for key, value in stats.items():
        print(f"{key:<{width}}  {value}")
    return 0


def cmd_train(args, ws):
    cfg = run_config(args)
    corpus, splits, catalogs = ws.load_prepared()
    name = args.name or cfg.fusion.variant
    if name == BASELINE:
        raise ConfigError(f"checkpoint name {BASELINE!r} is reserved for the baseline")

    def progress(entry):
        extra = f"  val hits@1 {entry['val_hits@1']:.4f}" if "val_hits@1" in entry else ""
        print(f"epoch {entry['epoch']:3d}  loss {entry['loss']:.5f}{extra}", flush=True)

    ckpt = train(cfg, corpus, splits, catalogs, progress=None if args.quiet else progress)
    out = ckpt.save(ws.checkpoints / name)
    write_manifest(ws, f"train-{name}", seed=cfg.seed, config_hash=cfg.hash(), corpus=ws.corpus, outputs=[out])
    print(f"saved checkpoint {out}")
    return 0


def cmd_baseline(args, ws):
    corpus, splits, _ = ws.load_prepared()
    model = fit_most_common(select(corpus, splits.train))
    out = ws.checkpoints / BASELINE / "model.json"
    model.save(out)
    write_manifest(ws, f"train-{BASELINE}", seed=None, config_hash=None, corpus=ws.corpus, outputs=[out])
    print(f"saved baseline {out}")
    return 0


def _evaluate_named(ws, name, records, catalogs, candidates):
    if name == BASELINE:
        model = MostCommonModel.load(ws.require(ws.checkpoints / BASELINE / "model.json", "baseline"))
        return evaluate_most_common(model, records, catalogs, candidates=candidates or "all")
    ckpt = Checkpoint.load(ws.checkpoint_dir(name))
    return evaluate(ckpt, records, candidates=candidates)


def _checkpoint_names(ws, requested):
    if requested:
        return requested
    if not ws.checkpoints.exists():
        raise MissingArtifactError(f"no checkpoints under {ws.checkpoints}; run `maex train` or `maex baseline` first")
    names = sorted(p.name for p in ws.checkpoints.iterdir() if p.is_dir())
    # baseline first, like a results table
    return sorted(names, key=lambda n: (n != BASELINE, n))


def cmd_eval(args, ws):
    corpus, splits, catalogs = ws.load_prepared()
    records = select(corpus, getattr(splits, args.split))
    names = _checkpoint_names(ws, args.checkpoint)
    report = MetricsReport.combine([_evaluate_named(ws, n, records, catalogs, args.candidates) for n in names])
    out = ws.reports / f"eval-{args.split}.json"
    report.write(out)
    print(report.render(per_attribute=args.per_attribute))
    return 0


def cmd_predict(args, ws):
    corpus = read_corpus(ws.require(ws.corpus, "preprocess"))
    by_id = {r.id: r for r in corpus}
    if args.product not in by_id:
        raise MissingArtifactError(f"product {args.product!r} is not in {ws.corpus}")
    record = by_id[args.product]
    if args.checkpoint == BASELINE:
        model = MostCommonModel.load(ws.require(ws.checkpoints / BASELINE / "model.json", "baseline"))
        pairs = model.scored(args.attribute, args.n)
    else:
        ckpt = Checkpoint.load(ws.checkpoint_dir(args.checkpoint))
        pred = predict_topn(ckpt, record, args.attribute, args.n, candidates=args.candidates)
        pairs = pred.pairs(ckpt.catalogs.values.items)
    print(format_listing(pairs))
    return 0


def cmd_report(args, ws):
    paths = [Path(p) for p in args.reports] or sorted(ws.require(ws.reports, "eval").glob("eval-*.json"))
    if not paths:
        raise MissingArtifactError(f"no eval reports under {ws.reports}; run `maex eval --out {ws.root}` first")
    for p in paths:
        report = MetricsReport.read(p)
        print(f"== {p}")
        print(report.render(per_attribute=args.per_attribute))
    return 0


def cmd_grid(args, ws):
    corpus, splits, catalogs = ws.load_prepared()
    configs = []
    for trial in args.trial:
        overrides = list(args.set or []) + [t for t in trial.split(",") if t]
        cfg = cfgmod.load_config(args.config, args.profile, overrides)
        if args.seed is not None:
            cfg.seed = args.seed
        configs.append(cfg.validate())
    report = run_grid(configs, corpus, splits, catalogs)
    out = ws.reports / "grid.json"
    report.write(out)
    print(report.render())
    return 0


# --- argument parsing ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="maex", description="Multimodal attribute extraction toolkit.")
    parser.add_argument("--version", action="version", version=f"maex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, config=True):
        p.add_argument("--out", default="run", help="workspace directory (default: run)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if config:
            p.add_argument("--config", help="JSON configuration file")
            p.add_argument("--profile", choices=sorted(cfgmod.PROFILES), default=None)
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic corpus"))
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("preprocess", help="normalize, filter and split a corpus; build catalogs"), config=False)
    p.add_argument("--input", help="corpus JSONL (default: <out>/corpus/raw.jsonl)")
    p.add_argument("--rules", help="attribute normalization rules, pattern<TAB>canonical per line")
    p.add_argument("--min-attr", type=int, default=500)
    p.add_argument("--min-value", type=int, default=50)
    p.add_argument("--dominance", type=float, default=0.80)
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--fixed-point", action="store_true", help="repeat filtering until nothing changes")
    p.set_defaults(func=cmd_preprocess)

    p = common(sub.add_parser("train", help="train one model"))
    p.add_argument("--name", help="checkpoint name (default: the fusion variant)")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("baseline", help="fit the most-common-value baseline"), config=False)
    p.set_defaults(func=cmd_baseline)

    p = common(sub.add_parser("eval", help="evaluate checkpoints and print a comparison table"), config=False)
    p.add_argument("--checkpoint", action="append", help="checkpoint name; repeatable (default: all)")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--candidates", choices=("all", "attribute"), default=None)
    p.add_argument("--per-attribute", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("predict", help="list the top-n values for one product"), config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--product", required=True, help="product id")
    p.add_argument("--attribute", required=True)
    p.add_argument("-n", type=int, default=5)
    p.add_argument("--candidates", choices=("all", "attribute"), default=None)
    p.set_defaults(func=cmd_predict)

    p = common(sub.add_parser("report", help="render saved reports"), config=False)
    p.add_argument("reports", nargs="*", help="report files (default: <out>/reports/eval-*.json)")
    p.add_argument("--per-attribute", action="store_true")
    p.set_defaults(func=cmd_report)

    p = common(sub.add_parser("grid", help="train a list of configurations and compare them on validation"))
    p.add_argument("--trial", action="append", required=True, metavar="K=V[,K=V...]",
                   help="one configuration as comma-separated overrides; repeatable")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, Workspace(args.out))
    except MaexError as exc:
        print(f"maex {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
