"""The encoder-fusion model: parameter layout, initialisation and forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maex import encoders, fusion
from maex import tensor as T
from maex.data import Catalogs, load_word_embeddings, token_ids, tokenize
from maex.encoders import ImageEncoderParams, TextEncoderParams
from maex.fusion import FusionParams
from maex.objective import batch_loss
from maex.params import ParameterStore


@dataclass
class Prepared:
    """Model-ready evidence for one product."""

    tokens: np.ndarray
    images: np.ndarray


def prepare(records, catalogs: Catalogs):
    return [Prepared(token_ids(tokenize(r.description), catalogs.tokens), r.images) for r in records]


class AttributeExtractor:
    def __init__(self, config, catalogs: Catalogs, image_dim, rng=None, read_embeddings=True):
        self.config = config
        self.catalogs = catalogs
        self.image_dim = image_dim
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        k = config.embed_dim
        store = self.store = ParameterStore()

        def normal(shape, std):
            return rng.normal(0.0, std, size=shape)

        store.add("attribute.embed", normal((len(catalogs.attributes), k), 1.0 / np.sqrt(k)))
        store.add("value.embed", normal((len(catalogs.values), k), 1.0 / np.sqrt(k)))

        self.text = self.image = None
        if config.uses_text:
            tc = config.text
            if tc.embeddings_path and read_embeddings:
                table = load_word_embeddings(tc.embeddings_path).table_for(catalogs.tokens)
            else:
                # placeholder rows are overwritten when a checkpoint is loaded
                table = normal((len(catalogs.tokens), tc.token_dim), 1.0 / np.sqrt(tc.token_dim))
                table[:2] = 0.0  # <unk>, <pad>
            d = table.shape[1]
            store.add("token.embed", table, frozen=not tc.trains_embeddings)
            fan = tc.window * d
            self.text = TextEncoderParams(
                filters=store.add("text.conv.W", normal((fan, tc.filters), np.sqrt(2.0 / fan))),
                bias=store.add("text.conv.b", np.zeros(tc.filters)),
                proj_W=store.add("text.proj.W", normal((tc.filters, k), np.sqrt(1.0 / tc.filters))),
                proj_b=store.add("text.proj.b", np.zeros(k)),
                window=tc.window,
                dropout=tc.dropout,
            )
        if config.uses_image:
            d_img = image_dim
            self.image = ImageEncoderParams(
                W=store.add("image.W", normal((d_img, k), np.sqrt(2.0 / d_img))),
                b=store.add("image.b", np.zeros(k)),
                empty=store.add("image.empty", normal(k, 1.0 / np.sqrt(k))),
                dropout=config.image.dropout,
            )
        weights = {}
        for name, shape in fusion.param_shapes(config.fusion.variant, k).items():
            full = f"fusion.{name}"
            if name.endswith("b"):
                weights[name] = store.add(full, np.zeros(shape))
            else:
                weights[name] = store.add(full, normal(shape, np.sqrt(1.0 / shape[0])))
        self.fusion = FusionParams(config.fusion.variant, weights)

    @property
    def value_table(self):
        return self.store["value.embed"]

    def context(self, evidence, attributes, mode="eval", rng=None):
        """Fused context embeddings (batch x k) for parallel lists of
        :class:`Prepared` evidence and attribute indices."""
        attributes = np.asarray(attributes, dtype=np.int64)
        c_a = encoders.embed_attribute(attributes, self.store["attribute.embed"])
        c_D = c_I = None
        if self.text is not None:
            c_D = encoders.encode_text_batch(
                [e.tokens for e in evidence], self.store["token.embed"], self.text, mode, rng
            )
        if self.image is not None:
            c_I = encoders.encode_images_batch([e.images for e in evidence], self.image, mode, rng)
        return fusion.fuse(c_a, c_D, c_I, self.fusion)

    def encode_batch_numpy(self, evidence, attributes, batch_size=512):
        """Eval-mode contexts as a plain array, without recording a tape."""
        out = []
        for lo in range(0, len(attributes), batch_size):
            out.append(self.context(evidence[lo : lo + batch_size], attributes[lo : lo + batch_size]).data)
        if not out:
            return np.zeros((0, self.config.embed_dim))
        return np.concatenate(out, axis=0)

    def loss(self, evidence, attributes, positives, negatives, rng):
        """Mean contrastive loss; ``negatives`` is (batch,) or (batch, n_neg).

        With several negatives per example the negative term is averaged
        over them.
        """
        c = self.context(evidence, attributes, "train", rng)
        table = self.value_table
        negatives = np.asarray(negatives, dtype=np.int64)
        if negatives.ndim == 1 or negatives.shape[1] == 1:
            return batch_loss(c, T.gather_rows(table, positives), T.gather_rows(table, negatives.reshape(-1)))
        B, n_neg = negatives.shape
        pos = T.rowwise_cosine(c, T.gather_rows(table, positives))
        c_rep = T.gather_rows(c, np.repeat(np.arange(B), n_neg))
        neg = T.rowwise_cosine(c_rep, T.gather_rows(table, negatives.reshape(-1)))
        return T.mean(T.square(1.0 - pos)) + T.mean(T.square(T.relu(neg)))
