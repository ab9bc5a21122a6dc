"""Training, evaluation, the most-common-value baseline and top-n listings."""
from __future__ import annotations

import difflib
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from maex import config as cfgmod
from maex.data import Catalogs, NegativeSampler, select, validate_corpus
from maex.errors import CatalogError, CheckpointError, ConfigError, TrainingDivergedError
from maex.model import AttributeExtractor, prepare
from maex.objective import DEFAULT_KS, decode_batch, decode_value
from maex.params import load_checkpoint, optimizer_step, save_checkpoint
from maex.report import LABELS, MetricsReport
from maex.tensor import Tape, backward

log = logging.getLogger(__name__)


# --- queries ---------------------------------------------------------------------


@dataclass
class Queries:
    """Flattened (product, attribute, gold value) triples for one split."""

    record: np.ndarray
    attribute: np.ndarray
    gold: np.ndarray  # -1 when the gold value never occurred in training
    skipped: int = 0


def make_queries(records, catalogs: Catalogs):
    rec, attr, gold = [], [], []
    skipped = 0
    for i, r in enumerate(records):
        for a, v in r.pairs:
            ai = catalogs.attributes.get(a)
            if ai is None:
                skipped += 1
                continue
            rec.append(i)
            attr.append(ai)
            gold.append(catalogs.values.get(v, -1))
    as_int = lambda xs: np.array(xs, dtype=np.int64)  # noqa: E731
    return Queries(as_int(rec), as_int(attr), as_int(gold), skipped)


def _tally(ranks, attrs, catalogs, ks):
    """Overall and per-attribute hit counts from 0-based gold ranks (None = miss)."""
    hits = {k: 0 for k in ks}
    per = {}
    for r, a in zip(ranks, attrs):
        name = catalogs.attributes.items[a]
        slot = per.setdefault(name, {"n": 0, "hits": {k: 0 for k in ks}})
        slot["n"] += 1
        for k in ks:
            if r is not None and r < k:
                hits[k] += 1
                slot["hits"][k] += 1
    return hits, per


# --- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    model: AttributeExtractor
    history: list = field(default_factory=list)

    @property
    def config(self):
        return self.model.config

    @property
    def catalogs(self):
        return self.model.catalogs

    def save(self, directory):
        directory = Path(directory)
        save_checkpoint(self.model.store, directory)
        cfgmod.save_config(self.config, directory / "config.json")
        self.catalogs.write(directory / "catalogs")
        meta = {
            "image_dim": self.model.image_dim,
            "variant": self.config.fusion.variant,
            "config_hash": self.config.hash(),
            # wall-clock timings stay out so reruns are byte-identical
            "history": [{k: v for k, v in h.items() if k != "seconds"} for h in self.history],
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        if not (directory / "meta.json").exists():
            raise CheckpointError(f"{directory} is not a model checkpoint (no meta.json)")
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        config = cfgmod.load_config(directory / "config.json")
        catalogs = Catalogs.read(directory / "catalogs")
        model = AttributeExtractor(config, catalogs, meta["image_dim"], read_embeddings=False)
        load_checkpoint(model.store, directory)
        return cls(model, meta.get("history", []))


def resolve_image_dim(config, records):
    corpus_dim = validate_corpus(records)
    want = config.image.feature_dim
    if want is not None and corpus_dim is not None and want != corpus_dim:
        raise ConfigError(f"image.feature_dim is {want} but the corpus has {corpus_dim}-dimensional features")
    dim = want if want is not None else corpus_dim
    if dim is None and config.uses_image:
        raise ConfigError("corpus has no image features; set image.feature_dim or use a text-only variant")
    return dim


def init_model(config, catalogs, image_dim):
    init_seq = np.random.SeedSequence(config.seed).spawn(4)[0]
    return AttributeExtractor(config, catalogs, image_dim, rng=np.random.default_rng(init_seq))


# --- training --------------------------------------------------------------------


def train(config, records, splits, catalogs, progress=None):
    """Train one model and return the checkpoint with the best validation hits@1.

    Every random choice (initialisation, example order, negatives, dropout)
    comes from streams derived from ``config.seed``.
    """
    config.validate()
    train_recs = select(records, splits.train)
    val_recs = select(records, splits.validation)
    image_dim = resolve_image_dim(config, records)
    model = init_model(config, catalogs, image_dim)
    store = model.store
    _, shuffle_seq, neg_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(4)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    neg_rng = np.random.default_rng(neg_seq)
    drop_rng = np.random.default_rng(drop_seq)

    evidence = prepare(train_recs, catalogs)
    q = make_queries(train_recs, catalogs)
    n = len(q.record)
    history = []
    if config.train.epochs == 0 or n == 0:
        return Checkpoint(model, history)

    sampler = NegativeSampler(catalogs.values.counts_array())
    val_q = make_queries(val_recs, catalogs)
    val_evidence = prepare(val_recs, catalogs)
    bs, n_neg = config.train.batch_size, config.train.negatives
    best_snap, best_score, stale = store.snapshot(), -1.0, 0

    for epoch in range(1, config.train.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for step, lo in enumerate(range(0, n, bs), 1):
            idx = order[lo : lo + bs]
            pos = q.gold[idx]
            neg = sampler.sample_many(np.repeat(pos, n_neg), neg_rng).reshape(len(idx), n_neg)
            with Tape() as tape:
                loss = model.loss([evidence[i] for i in q.record[idx]], q.attribute[idx], pos, neg, drop_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}, step {step}")
            backward(tape, loss)
            optimizer_step(store, config.optimizer)
            losses.append(value)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "seconds": round(time.perf_counter() - t0, 3)}
        if len(val_q.record):
            entry["val_hits@1"] = _hits_for(model, val_evidence, val_q, config.candidates, ks=(1,))[1]
            score = entry["val_hits@1"]
        else:
            score = epoch  # no validation data: keep the latest parameters
        history.append(entry)
        log.info("epoch %d loss %.5f %s", epoch, entry["loss"], entry.get("val_hits@1", ""))
        if progress is not None:
            progress(entry)
        if score > best_score:
            best_snap, best_score, stale = store.snapshot(), score, 0
        else:
            stale += 1
            if stale >= config.train.patience:
                break
    store.restore(best_snap)
    return Checkpoint(model, history)


# --- evaluation --------------------------------------------------------------------


def _candidate_sets(catalogs, attrs, mode):
    if mode == "all":
        return None
    return [np.array(catalogs.attribute_values.get(int(a), []), dtype=np.int64) for a in attrs]


def _predictions(model, evidence, q, mode):
    C = model.encode_batch_numpy([evidence[i] for i in q.record], q.attribute)
    return decode_batch(C, model.value_table, _candidate_sets(model.catalogs, q.attribute, mode))


def _hits_for(model, evidence, q, mode, ks=DEFAULT_KS):
    preds = _predictions(model, evidence, q, mode)
    ranks = [p.rank_of(g) for p, g in zip(preds, q.gold)]
    return {k: sum(1 for r in ranks if r is not None and r < k) / len(ranks) for k in ks}


def evaluate(checkpoint, records, label=None, candidates=None, ks=DEFAULT_KS):
    """Eval-mode hits@k over every (product, attribute) query of ``records``."""
    model = checkpoint.model
    cfg = model.config
    mode = candidates or cfg.candidates
    t0 = time.perf_counter()
    q = make_queries(records, model.catalogs)
    preds = _predictions(model, prepare(records, model.catalogs), q, mode) if len(q.record) else []
    ranks = [p.rank_of(g) for p, g in zip(preds, q.gold)]
    hits, per = _tally(ranks, q.attribute, model.catalogs, ks)
    label = label or LABELS[cfg.fusion.variant]
    meta = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "candidates": mode,
        "skipped_queries": q.skipped,
        "wall_time": round(time.perf_counter() - t0, 3),
    }
    return MetricsReport(ks=tuple(ks)).add_row(label, len(ranks), hits, per, meta)


# --- most-common baseline ------------------------------------------------------------


@dataclass
class MostCommonModel:
    """Per-attribute value rankings by training count (ties lexicographic)."""

    per_attribute: dict  # attribute -> [(value, count), ...]
    global_ranking: list  # [(value, count), ...]

    def ranking(self, attribute, restrict=False):
        own = [v for v, _ in self.per_attribute.get(attribute, [])]
        if restrict and own:
            return own
        seen = set(own)
        return own + [v for v, _ in self.global_ranking if v not in seen]

    def predict(self, attribute, n=1):
        return self.ranking(attribute)[:n]

    def scored(self, attribute, n=5):
        """Top-n (value, share of the attribute's training pairs)."""
        own = self.per_attribute.get(attribute)
        ranked = own if own else self.global_ranking
        total = sum(c for _, c in ranked)
        return [(v, c / total) for v, c in ranked[:n]]

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        data = {"per_attribute": self.per_attribute, "global": self.global_ranking}
        Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        per = {a: [tuple(x) for x in vs] for a, vs in data["per_attribute"].items()}
        return cls(per, [tuple(x) for x in data["global"]])


def fit_most_common(train_records):
    pair_c, value_c = {}, Counter()
    for r in train_records:
        for a, v in r.pairs:
            pair_c.setdefault(a, Counter())[v] += 1
            value_c[v] += 1

    def rank(counter):
        return [(v, int(counter[v])) for v in sorted(counter, key=lambda v: (-counter[v], v))]

    return MostCommonModel({a: rank(c) for a, c in sorted(pair_c.items())}, rank(value_c))


def evaluate_most_common(model, records, catalogs, candidates="all", ks=DEFAULT_KS, label=LABELS["most-common"]):
    t0 = time.perf_counter()
    q = make_queries(records, catalogs)
    positions = {}
    ranks = []
    for a, g in zip(q.attribute, q.gold):
        name = catalogs.attributes.items[a]
        if name not in positions:
            positions[name] = {v: i for i, v in enumerate(model.ranking(name, restrict=candidates == "attribute"))}
        ranks.append(positions[name].get(catalogs.values.items[g]) if g >= 0 else None)
    hits, per = _tally(ranks, q.attribute, catalogs, ks)
    meta = {"candidates": candidates, "skipped_queries": q.skipped, "wall_time": round(time.perf_counter() - t0, 3)}
    return MetricsReport(ks=tuple(ks)).add_row(label, len(ranks), hits, per, meta)


# --- prediction listings -------------------------------------------------------------


def _unknown_attribute(attribute, known):
    near = difflib.get_close_matches(attribute, known, n=3, cutoff=0.0)
    return CatalogError(f"unknown attribute {attribute!r}; nearest known: {', '.join(near)}")


def predict_topn(checkpoint, record, attribute, n=5, candidates=None):
    """Top-n values for one product and attribute, with full-precision scores."""
    model = checkpoint.model
    cats = model.catalogs
    if attribute not in cats.attributes:
        raise _unknown_attribute(attribute, cats.attributes.items)
    a = cats.attributes[attribute]
    C = model.encode_batch_numpy(prepare([record], cats), np.array([a]))
    cand = None
    if (candidates or model.config.candidates) == "attribute":
        cand = cats.attribute_values.get(a)
    return decode_value(C[0], model.value_table, cand).top(n)


def format_listing(pairs):
    """``value score`` lines, scores rounded to two decimals."""
    return "\n".join(f"{v} {s:.2f}" for v, s in pairs)


# --- grid ------------------------------------------------------------------------------


def run_grid(configs, records, splits, catalogs, eval_split="validation"):
    """Train every config and return one comparison report (one row per config)."""
    reports = []
    eval_recs = select(records, getattr(splits, eval_split))
    for cfg in configs:
        ckpt = train(cfg, records, splits, catalogs)
        label = f"{LABELS[cfg.fusion.variant]} [{cfg.hash()}]"
        reports.append(evaluate(ckpt, eval_recs, label=label))
    return MetricsReport.combine(reports)
