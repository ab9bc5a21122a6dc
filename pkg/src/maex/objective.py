"""Contrastive cosine loss, nearest-value decoding and hits@k."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maex import tensor as T
from maex.errors import ContractError, DegenerateVectorError
from maex.tensor import Tensor

DEFAULT_KS = (1, 5, 10, 20)


def contrastive_loss(c, c_plus, c_minus):
    """Squared-hinge contrastive loss on cosine similarities.

    ``(1 - g(c, c+))**2 + max(g(c, c-), 0)**2``. Vectors give a scalar;
    (batch x k) matrices give one loss per row. At ``g(c, c-) == 0`` the
    gradient of the zero branch is used.
    """
    c, c_plus, c_minus = T.as_tensor(c), T.as_tensor(c_plus), T.as_tensor(c_minus)
    pos = T.rowwise_cosine(c, c_plus)
    neg = T.rowwise_cosine(c, c_minus)
    return T.square(1.0 - pos) + T.square(T.relu(neg))


def batch_loss(c, c_plus, c_minus):
    """Mean contrastive loss over a batch."""
    return T.mean(contrastive_loss(c, c_plus, c_minus))


@dataclass
class RankedPrediction:
    """Value indices in decreasing score order (ties: ascending index)."""

    indices: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.indices)

    def top(self, n):
        return RankedPrediction(self.indices[:n], self.scores[:n])

    def rank_of(self, value):
        """0-based position of ``value``, or None if it is not ranked."""
        hit = np.flatnonzero(self.indices == value)
        return int(hit[0]) if hit.size else None

    def pairs(self, labels=None):
        if labels is None:
            return [(int(i), float(s)) for i, s in zip(self.indices, self.scores)]
        return [(labels[int(i)], float(s)) for i, s in zip(self.indices, self.scores)]


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def cosine_scores(C, table):
    """Cosine similarity of every row of ``C`` (n x k) with every row of ``table`` (V x k)."""
    C, table = _as_array(C), _as_array(table)
    cn = np.sqrt((C * C).sum(axis=-1))
    tn = np.sqrt((table * table).sum(axis=-1))
    if np.any(cn == 0):
        raise DegenerateVectorError("context embedding has zero norm")
    if np.any(tn == 0):
        raise DegenerateVectorError("a value embedding has zero norm")
    return (C @ table.T) / np.outer(cn, tn)


def rank_scores(scores, candidates):
    order = np.argsort(-scores, kind="stable")
    return RankedPrediction(candidates[order], scores[order])


def decode_value(c, value_table, candidates=None):
    """Rank candidate values by cosine similarity to the context embedding."""
    table = _as_array(value_table)
    if candidates is None:
        candidates = np.arange(table.shape[0])
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if candidates.size == 0:
        raise ContractError("decode_value needs a nonempty candidate set")
    c = _as_array(c).reshape(1, -1)
    scores = cosine_scores(c, table[candidates])[0]
    return rank_scores(scores, candidates)


def decode_batch(C, value_table, candidates=None):
    """decode_value for every row of C; ``candidates`` is None, one index
    array shared by all rows, or a list with one array per row."""
    table = _as_array(value_table)
    C = _as_array(C)
    if candidates is None or isinstance(candidates, np.ndarray):
        cand = np.arange(table.shape[0]) if candidates is None else np.unique(candidates)
        if cand.size == 0:
            raise ContractError("decode_value needs a nonempty candidate set")
        S = cosine_scores(C, table[cand])
        return [rank_scores(S[i], cand) for i in range(len(C))]
    if len(candidates) != len(C):
        raise ContractError("one candidate set per context row is required")
    return [decode_value(C[i], table, candidates[i]) for i in range(len(C))]


def hits_at_k(predictions, gold, ks=DEFAULT_KS):
    """Fraction of examples whose gold value is among the top k predictions."""
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions but {len(gold)} gold values")
    if not predictions:
        raise ContractError("hits_at_k needs at least one example")
    counts = hit_counts(predictions, gold, ks)
    return {k: counts[k] / len(gold) for k in ks}


def hit_counts(predictions, gold, ks=DEFAULT_KS):
    ranks = [p.rank_of(g) for p, g in zip(predictions, gold)]
    return {k: sum(1 for r in ranks if r is not None and r < k) for k in ks}
