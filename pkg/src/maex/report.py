"""Hits@k reports: JSON on disk, aligned text tables on the console."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from maex.objective import DEFAULT_KS

LABELS = {
    "most-common": "Most-Common Value",
    "image": "Image Baseline",
    "text": "Text Baseline",
    "concat": "Multimodal Baseline - Concat",
    "gmu": "Multimodal Baseline - GMU",
}


@dataclass
class MetricsReport:
    """Per-model hit counts; fractions are derived so merged shards stay exact."""

    ks: tuple = DEFAULT_KS
    # label -> {"n": int, "hits": {k: int}}
    counts: dict = field(default_factory=dict)
    # label -> attribute -> {"n": int, "hits": {k: int}}
    per_attribute: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def rows(self):
        return {label: self.row(label) for label in self.counts}

    def row(self, label):
        c = self.counts[label]
        return {k: (c["hits"][k] / c["n"] if c["n"] else 0.0) for k in self.ks}

    def attribute_rows(self, label):
        return {
            a: {k: (c["hits"][k] / c["n"] if c["n"] else 0.0) for k in self.ks}
            for a, c in sorted(self.per_attribute.get(label, {}).items())
        }

    def add_row(self, label, n, hits, per_attribute=None, meta=None):
        self.counts[label] = {"n": int(n), "hits": {k: int(hits[k]) for k in self.ks}}
        if per_attribute is not None:
            self.per_attribute[label] = {
                a: {"n": int(c["n"]), "hits": {k: int(c["hits"][k]) for k in self.ks}}
                for a, c in per_attribute.items()
            }
        if meta is not None:
            self.meta[label] = meta
        return self

    @classmethod
    def combine(cls, reports):
        """Union of rows; rows sharing a label have their counts summed."""
        out = cls()
        for rep in reports:
            for label, c in rep.counts.items():
                cur = out.counts.setdefault(label, {"n": 0, "hits": {k: 0 for k in out.ks}})
                cur["n"] += c["n"]
                for k in out.ks:
                    cur["hits"][k] += c["hits"][k]
                for a, ac in rep.per_attribute.get(label, {}).items():
                    dst = out.per_attribute.setdefault(label, {}).setdefault(
                        a, {"n": 0, "hits": {k: 0 for k in out.ks}}
                    )
                    dst["n"] += ac["n"]
                    for k in out.ks:
                        dst["hits"][k] += ac["hits"][k]
                if label in rep.meta:
                    out.meta.setdefault(label, rep.meta[label])
        return out

    def to_dict(self):
        def enc(c):
            return {"n": c["n"], "hits": {str(k): v for k, v in c["hits"].items()}}

        return {
            "ks": list(self.ks),
            "rows": {lbl: {f"hits@{k}": v for k, v in self.row(lbl).items()} for lbl in self.counts},
            "counts": {lbl: enc(c) for lbl, c in self.counts.items()},
            "per_attribute": {
                lbl: {a: enc(c) for a, c in attrs.items()} for lbl, attrs in self.per_attribute.items()
            },
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data):
        ks = tuple(data["ks"])

        def dec(c):
            return {"n": c["n"], "hits": {int(k): v for k, v in c["hits"].items()}}

        return cls(
            ks=ks,
            counts={lbl: dec(c) for lbl, c in data["counts"].items()},
            per_attribute={
                lbl: {a: dec(c) for a, c in attrs.items()} for lbl, attrs in data.get("per_attribute", {}).items()
            },
            meta=data.get("meta", {}),
        )

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def render(self, per_attribute=False):
        """Aligned table, one row per model, hits@k as percentages."""
        head = [""] + [f"Hits@{k}" for k in self.ks]
        body = [[lbl] + [f"{100 * v:.2f}" for v in self.row(lbl).values()] for lbl in self.counts]
        lines = _align([head] + body)
        if per_attribute:
            for lbl in self.counts:
                rows = self.attribute_rows(lbl)
                if not rows:
                    continue
                lines.append("")
                lines.append(f"{lbl}: per attribute")
                sub = [[a] + [f"{100 * v:.2f}" for v in r.values()] for a, r in rows.items()]
                lines.extend(_align([head] + sub))
        return "\n".join(lines)


def _align(table):
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    out = []
    for row in table:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        out.append("  ".join(cells).rstrip())
    return out
