"""Product records, corpus files and the preprocessing pipeline.

Corpus files are JSON Lines, one record per line::

    {"id": "p1", "description": "...", "images": [[0.1, ...], "feats/p1_0.npy"],
     "pairs": [["color", "red"], ["length", "12 in"]]}

``images`` entries are inline vectors or paths (relative to the corpus file)
of ``.npy`` / whitespace-separated text vectors. Optional keys ``flagged``
and ``evidence`` are preserved on round trip.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from maex.errors import (
    CatalogError,
    ConfigError,
    CorpusFormatError,
    DegenerateCatalogError,
    InsufficientDataError,
)

UNK = "<unk>"
PAD = "<pad>"
UNK_INDEX = 0
PAD_INDEX = 1


@dataclass
class ProductRecord:
    id: str
    description: str = ""
    images: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    pairs: list = field(default_factory=list)
    flagged: bool = False
    evidence: dict | None = None

    def __post_init__(self):
        if not self.id:
            raise CorpusFormatError("record id must be nonempty")
        imgs = np.asarray(self.images, dtype=np.float64)
        if imgs.size == 0:
            imgs = imgs.reshape(0, imgs.shape[-1] if imgs.ndim == 2 else 0)
        elif imgs.ndim == 1:
            imgs = imgs[None, :]
        self.images = imgs
        self.pairs = [(str(a), str(v)) for a, v in self.pairs]

    @property
    def image_dim(self):
        return self.images.shape[1] if len(self.images) else None

    def to_json(self):
        obj = {
            "id": self.id,
            "description": self.description,
            "images": [[float(x) for x in row] for row in self.images],
            "pairs": [[a, v] for a, v in self.pairs],
        }
        if self.flagged:
            obj["flagged"] = True
        if self.evidence is not None:
            obj["evidence"] = self.evidence
        return obj


def _load_vector(ref, base):
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64).reshape(-1)
    return np.array(path.read_text(encoding="utf-8").split(), dtype=np.float64)


def parse_record(obj, base=Path(".")):
    if not isinstance(obj, dict):
        raise CorpusFormatError("record must be a JSON object")
    for key in ("id", "description", "images", "pairs"):
        if key not in obj:
            raise CorpusFormatError(f"record lacks field {key!r}")
    images = []
    for ref in obj["images"]:
        images.append(_load_vector(ref, base) if isinstance(ref, str) else np.asarray(ref, dtype=np.float64))
    if images and len({len(v) for v in images}) != 1:
        raise CorpusFormatError("image vectors within a record differ in length")
    pairs = obj["pairs"]
    if not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in pairs):
        raise CorpusFormatError("pairs must be [attribute, value] lists")
    return ProductRecord(
        id=str(obj["id"]),
        description=str(obj["description"]),
        images=np.array(images) if images else np.zeros((0, 0)),
        pairs=[tuple(p) for p in pairs],
        flagged=bool(obj.get("flagged", False)),
        evidence=obj.get("evidence"),
    )


def validate_corpus(records):
    """Check id uniqueness and a single image dimensionality; return that dimension."""
    seen = set()
    dim = None
    for r in records:
        if r.id in seen:
            raise CorpusFormatError(f"duplicate record id {r.id!r}")
        seen.add(r.id)
        if r.image_dim is not None:
            if dim is None:
                dim = r.image_dim
            elif r.image_dim != dim:
                raise CorpusFormatError(
                    f"record {r.id!r} has image dimension {r.image_dim}, corpus uses {dim}"
                )
    return dim


def read_corpus(path):
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(json.loads(line), path.parent))
            except (json.JSONDecodeError, CorpusFormatError, ValueError, OSError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
    try:
        validate_corpus(records)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from exc
    return records


def write_corpus(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=False) + "\n")
    return path


def corpus_stats(records):
    """Corpus statistics keyed by human-readable field names."""
    pairs = [p for r in records for p in r.pairs]
    return {
        "products": len(records),
        "images": int(sum(len(r.images) for r in records)),
        "attribute-value pairs": len(pairs),
        "unique attributes": len({a for a, _ in pairs}),
        "unique values": len({v for _, v in pairs}),
    }


# --- normalization -------------------------------------------------------------


class NormalizationRules:
    """Ordered (pattern, canonical) rewrites for attribute strings; first match wins."""

    def __init__(self, rules=()):
        self.rules = []
        for pattern, canonical in rules:
            try:
                self.rules.append((re.compile(pattern), canonical))
            except re.error as exc:
                raise ConfigError(f"bad normalization pattern {pattern!r}: {exc}") from exc

    @classmethod
    def from_file(cls, path):
        """Read ``pattern<TAB>canonical`` lines; blank lines and '#' comments skipped."""
        rules = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'pattern<TAB>canonical'")
            rules.append((parts[0], parts[1]))
        return cls(rules)

    def apply(self, attribute):
        for rx, canonical in self.rules:
            if rx.search(attribute):
                return canonical
        return attribute

    def __len__(self):
        return len(self.rules)


def normalize_attributes(records, rules):
    out = []
    for r in records:
        pairs = [(rules.apply(a), v) for a, v in r.pairs]
        out.append(replace(r, pairs=pairs))
    return out


# --- frequency filters -----------------------------------------------------------


def _filter_once(records, min_attr_count, min_value_count, dominance):
    attr_count = Counter()
    value_count = Counter()
    pair_count = Counter()
    for r in records:
        for a, v in r.pairs:
            attr_count[a] += 1
            value_count[v] += 1
            pair_count[(a, v)] += 1
    top = Counter()
    for (a, _), c in pair_count.items():
        top[a] = max(top[a], c)
    dominated = {a for a, c in attr_count.items() if top[a] / c > dominance}

    def keep(a, v):
        return attr_count[a] >= min_attr_count and value_count[v] >= min_value_count and a not in dominated

    out = []
    for r in records:
        pairs = [(a, v) for a, v in r.pairs if keep(a, v)]
        out.append(replace(r, pairs=pairs, flagged=r.flagged or not pairs))
    return out


def filter_pairs(records, min_attr_count=500, min_value_count=50, dominance=0.80, fixed_point=False):
    """Drop pairs whose attribute is rare, whose value is rare, or whose
    attribute is dominated by one value.

    Counts come from the input corpus before any removal. With
    ``fixed_point=True`` the pass repeats until nothing more is removed.
    Records left without pairs stay in the corpus with ``flagged=True``.
    """
    if min_attr_count <= 0 or min_value_count <= 0:
        raise ConfigError("filter thresholds must be positive")
    if not 0.0 < dominance <= 1.0:
        raise ConfigError(f"dominance must lie in (0, 1], got {dominance}")
    out = _filter_once(records, min_attr_count, min_value_count, dominance)
    if fixed_point:
        n = sum(len(r.pairs) for r in out)
        while True:
            out = _filter_once(out, min_attr_count, min_value_count, dominance)
            m = sum(len(r.pairs) for r in out)
            if m == n:
                break
            n = m
    return out


def select_top_attributes(records, n=100):
    if n < 1:
        raise ConfigError("n must be >= 1")
    counts = Counter(a for r in records for a, _ in r.pairs)
    ranked = sorted(counts, key=lambda a: (-counts[a], a))
    keep = set(ranked[:n])
    return [replace(r, pairs=[(a, v) for a, v in r.pairs if a in keep]) for r in records]


# --- splits ------------------------------------------------------------------------


@dataclass
class SplitSet:
    train: list
    validation: list
    test: list
    seed: int

    def parts(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, ids in self.parts().items():
            (directory / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
        (directory / "seed.txt").write_text(f"{self.seed}\n", encoding="utf-8")

    @classmethod
    def read(cls, directory):
        directory = Path(directory)

        def ids(name):
            return [ln for ln in (directory / f"{name}.txt").read_text(encoding="utf-8").splitlines() if ln]

        seed = int((directory / "seed.txt").read_text(encoding="utf-8").strip())
        return cls(ids("train"), ids("validation"), ids("test"), seed)


def split_sizes(n, ratios=(0.8, 0.1, 0.1)):
    """Floor for train and validation, remainder to test."""
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed=0):
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if len(records) < 3:
        raise InsufficientDataError(f"need at least 3 records to split, got {len(records)}")
    ids = [r.id for r in records]
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    return SplitSet(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def select(records, ids):
    by_id = {r.id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CorpusFormatError(f"split refers to unknown record ids, e.g. {missing[0]!r}")
    return [by_id[i] for i in ids]


# --- tokenizer -------------------------------------------------------------------

_TOKEN_RX = re.compile(r"\w+|[^\w\s]")


def tokenize(description):
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RX.findall(description.lower())


# --- catalogs --------------------------------------------------------------------


class Vocab:
    """String <-> contiguous index mapping with occurrence counts."""

    def __init__(self, reserved=()):
        self.items: list[str] = []
        self.index: dict[str, int] = {}
        self.counts: list[int] = []
        self.n_reserved = len(reserved)
        for tok in reserved:
            self._append(tok, 0)

    def _append(self, item, count):
        self.index[item] = len(self.items)
        self.items.append(item)
        self.counts.append(count)

    @classmethod
    def from_counts(cls, counter, reserved=()):
        v = cls(reserved)
        for item in sorted(counter, key=lambda x: (-counter[x], x)):
            if item in v.index:
                continue
            v._append(item, int(counter[item]))
        return v

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    def __getitem__(self, item):
        try:
            return self.index[item]
        except KeyError:
            raise CatalogError(f"{item!r} is not in the catalog") from None

    def get(self, item, default=None):
        return self.index.get(item, default)

    def count(self, item):
        return self.counts[self[item]]

    def as_dict(self):
        return {it: c for it, c in zip(self.items, self.counts)}

    def counts_array(self):
        return np.array(self.counts, dtype=np.int64)

    def write_tsv(self, path):
        Path(path).write_text(
            "".join(f"{it}\t{i}\t{c}\n" for i, (it, c) in enumerate(zip(self.items, self.counts))),
            encoding="utf-8",
        )

    @classmethod
    def read_tsv(cls, path, n_reserved=0):
        v = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3 or int(parts[1]) != len(v.items):
                raise CorpusFormatError(f"{path}:{lineno}: expected 'entry<TAB>index<TAB>count'")
            v._append(parts[0], int(parts[2]))
        v.n_reserved = n_reserved
        return v


@dataclass
class Catalogs:
    attributes: Vocab
    values: Vocab
    tokens: Vocab
    # value indices observed with each attribute index in training
    attribute_values: dict = field(default_factory=dict)
    # per-attribute value counts: {attribute index: {value index: count}}
    pair_counts: dict = field(default_factory=dict)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.attributes.write_tsv(directory / "attributes.tsv")
        self.values.write_tsv(directory / "values.tsv")
        self.tokens.write_tsv(directory / "tokens.tsv")
        lines = []
        for a in sorted(self.pair_counts):
            for v in sorted(self.pair_counts[a]):
                lines.append(f"{self.attributes.items[a]}\t{self.values.items[v]}\t{self.pair_counts[a][v]}\n")
        (directory / "pairs.tsv").write_text("".join(lines), encoding="utf-8")

    @classmethod
    def read(cls, directory):
        directory = Path(directory)
        attributes = Vocab.read_tsv(directory / "attributes.tsv")
        values = Vocab.read_tsv(directory / "values.tsv")
        tokens = Vocab.read_tsv(directory / "tokens.tsv", n_reserved=2)
        pair_counts: dict = {}
        for line in (directory / "pairs.tsv").read_text(encoding="utf-8").splitlines():
            a, v, c = line.split("\t")
            pair_counts.setdefault(attributes[a], {})[values[v]] = int(c)
        attribute_values = {a: sorted(d) for a, d in pair_counts.items()}
        return cls(attributes, values, tokens, attribute_values, pair_counts)


def build_catalogs(train_records):
    """Attribute, value and token catalogs from the training split only.

    Entries are indexed by descending count, ties broken lexicographically.
    Token index 0 is ``<unk>`` and 1 is ``<pad>`` (both with count 0).
    """
    if not train_records:
        raise InsufficientDataError("cannot build catalogs from an empty training split")
    attr_c, value_c, tok_c, pair_c = Counter(), Counter(), Counter(), Counter()
    for r in train_records:
        for a, v in r.pairs:
            attr_c[a] += 1
            value_c[v] += 1
            pair_c[(a, v)] += 1
        tok_c.update(tokenize(r.description))
    attributes = Vocab.from_counts(attr_c)
    values = Vocab.from_counts(value_c)
    tokens = Vocab.from_counts(tok_c, reserved=(UNK, PAD))
    pair_counts: dict = {}
    for (a, v), c in pair_c.items():
        pair_counts.setdefault(attributes[a], {})[values[v]] = c
    attribute_values = {a: sorted(d) for a, d in pair_counts.items()}
    return Catalogs(attributes, values, tokens, attribute_values, pair_counts)


def count_histogram(vocab, n_bins=20):
    """Log-spaced histogram of entry counts: list of (lo, hi, n_entries)."""
    counts = np.array([c for c in vocab.counts[vocab.n_reserved :]], dtype=np.float64)
    if counts.size == 0:
        return []
    edges = np.unique(np.geomspace(1, counts.max() + 1, n_bins + 1).round())
    hist, edges = np.histogram(counts, bins=edges)
    return [(int(lo), int(hi), int(n)) for lo, hi, n in zip(edges[:-1], edges[1:], hist)]


def token_ids(tokens, vocab):
    return np.array([vocab.get(t, UNK_INDEX) for t in tokens], dtype=np.int64)


# --- word embeddings ---------------------------------------------------------------


@dataclass
class WordEmbeddings:
    """Token table with ``<unk>`` at row 0 and ``<pad>`` at row 1 (both zero)."""

    vocab: Vocab
    matrix: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[1]

    def lookup(self, token):
        return self.matrix[self.vocab.get(token, UNK_INDEX)]

    def table_for(self, tokens: Vocab):
        """Rows aligned to another token catalog; tokens absent from the file get zeros."""
        out = np.zeros((len(tokens), self.dim))
        for i, tok in enumerate(tokens.items):
            j = self.vocab.get(tok)
            if j is not None and j >= self.vocab.n_reserved:
                out[i] = self.matrix[j]
        return out


def load_word_embeddings(path):
    items, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise CorpusFormatError(f"{path}:{lineno}: no vector components")
            if len(vals) != dim:
                raise CorpusFormatError(f"{path}:{lineno}: expected {dim} components, found {len(vals)}")
            try:
                rows.append([float(x) for x in vals])
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
            items.append(tok)
    if dim is None:
        raise CorpusFormatError(f"{path}: empty embedding file")
    vocab = Vocab(reserved=(UNK, PAD))
    for tok in items:
        vocab._append(tok, 1)
    matrix = np.vstack([np.zeros((2, dim)), np.array(rows)])
    return WordEmbeddings(vocab, matrix)


def save_word_embeddings(emb, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(emb.vocab.items[emb.vocab.n_reserved :], emb.matrix[emb.vocab.n_reserved :]):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


# --- negative sampling ---------------------------------------------------------------


class NegativeSampler:
    """Draws value indices proportionally to their training counts,
    redrawing whenever the draw equals the positive."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.float64)
        if np.count_nonzero(counts > 0) < 2:
            raise DegenerateCatalogError("negative sampling needs at least two distinct values")
        self.cdf = np.cumsum(counts) / counts.sum()
        self.cdf[-1] = 1.0

    def _draw(self, rng, n):
        return np.searchsorted(self.cdf, rng.random(n), side="right")

    def sample(self, positive, rng):
        while True:
            v = int(self._draw(rng, 1)[0])
            if v != positive:
                return v

    def sample_many(self, positives, rng):
        positives = np.asarray(positives, dtype=np.int64)
        out = self._draw(rng, len(positives))
        bad = out == positives
        while bad.any():
            out[bad] = self._draw(rng, int(bad.sum()))
            bad = out == positives
        return out


def sample_negative(catalogs, positive, rng):
    """One negative value index; ``positive`` is a value index or string (may be unknown)."""
    values = catalogs.values if isinstance(catalogs, Catalogs) else catalogs
    if isinstance(positive, str):
        positive = values.get(positive, -1)
    elif positive is None:
        positive = -1
    return NegativeSampler(values.counts_array()).sample(positive, rng)
