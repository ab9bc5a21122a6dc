"""Attribute/value embeddings, the text CNN and the image encoder.

All encoders work on batches; the single-example functions wrap a batch
of one so both paths share one implementation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maex import tensor as T
from maex.data import PAD_INDEX
from maex.errors import CatalogError, CorpusFormatError
from maex.tensor import Tensor


@dataclass
class TextEncoderParams:
    filters: Tensor  # (window * token_dim, n_filters)
    bias: Tensor  # (n_filters,)
    proj_W: Tensor  # (n_filters, k)
    proj_b: Tensor  # (k,)
    window: int
    dropout: float = 0.0


@dataclass
class ImageEncoderParams:
    W: Tensor  # (feature_dim, k)
    b: Tensor  # (k,)
    empty: Tensor  # (k,) stands in for a product without images
    dropout: float = 0.0


def _lookup(index, table, what):
    idx = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx.reshape(-1)[(idx.reshape(-1) < 0) | (idx.reshape(-1) >= n)][0]
        raise CatalogError(f"{what} index {int(bad)} out of range for a catalog of {n}")
    return T.gather_rows(table, idx)


def embed_attribute(a, table):
    """Row(s) of the attribute table for an index or an index array."""
    return _lookup(a, table, "attribute")


def embed_value(v, table):
    return _lookup(v, table, "value")


def pad_to_window(ids, window):
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) >= window:
        return ids
    return np.concatenate([ids, np.full(window - len(ids), PAD_INDEX, dtype=np.int64)])


def encode_text_batch(sequences, token_table, params: TextEncoderParams, mode="eval", rng=None):
    """Encode token-id sequences into a (batch x k) tensor.

    Sequences shorter than the window (including empty ones) are
    right-padded with the padding token.
    """
    w = params.window
    seqs = [pad_to_window(s, w) for s in sequences]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    tok_off = np.concatenate([[0], np.cumsum(lengths)])
    n_win = lengths - w + 1
    win_off = np.concatenate([[0], np.cumsum(n_win)])
    starts = np.concatenate([tok_off[i] + np.arange(n_win[i]) for i in range(len(seqs))])

    emb = T.gather_rows(token_table, np.concatenate(seqs))
    windows = T.unfold(emb, starts, w)
    feats = T.relu(T.affine(windows, params.filters, params.bias))
    pooled = T.segment_max(feats, win_off)
    pooled = T.dropout(pooled, params.dropout, mode, rng)
    return T.affine(pooled, params.proj_W, params.proj_b)


def encode_text(token_ids, token_table, params: TextEncoderParams, mode="eval", rng=None):
    out = encode_text_batch([token_ids], token_table, params, mode, rng)
    return T.reshape(out, (out.shape[1],))


def encode_images_batch(feature_sets, params: ImageEncoderParams, mode="eval", rng=None):
    """Project every image, max-pool per product, then apply dropout.

    A product with no images receives the learned empty-evidence vector.
    """
    d = params.W.shape[0]
    sets = []
    for feats in feature_sets:
        f = np.asarray(feats, dtype=np.float64)
        if f.size == 0:
            sets.append(np.zeros((0, d)))
            continue
        if f.ndim == 1:
            f = f[None, :]
        if f.shape[1] != d:
            raise CorpusFormatError(f"image features have dimension {f.shape[1]}, encoder expects {d}")
        sets.append(f)
    counts = np.array([len(f) for f in sets], dtype=np.int64)
    empty = counts == 0
    k = params.W.shape[1]
    if empty.all():
        pooled = T.gather_rows(T.reshape(params.empty, (1, k)), np.zeros(len(sets), dtype=np.int64))
    else:
        X = Tensor(np.concatenate(sets, axis=0))
        h = T.relu(T.affine(X, params.W, params.b))
        pooled = T.segment_max(h, np.concatenate([[0], np.cumsum(counts)]))
        pooled = T.fill_rows(pooled, empty, params.empty)
    return T.dropout(pooled, params.dropout, mode, rng)


def encode_images(features, params: ImageEncoderParams, mode="eval", rng=None):
    out = encode_images_batch([features], params, mode, rng)
    return T.reshape(out, (out.shape[1],))
