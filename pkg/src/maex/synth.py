"""Synthetic product corpora with known, controllable evidence.

Each product carries a few attribute-value pairs. Per pair, the value's
token is planted in the description with probability ``text_signal_rate``,
and the value's centroid is added to every image vector with probability
``image_signal_rate``; otherwise that evidence says nothing about the
value. Values within an attribute follow a Zipf law so that a
most-common-value predictor has a known accuracy.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from maex.data import ProductRecord
from maex.errors import ConfigError

# Fractions of findable pairs visible in the text and in the images,
# as estimated by a crowdsourced annotation study.
CROWD_TEXT_RATE = 0.70
CROWD_IMAGE_RATE = 0.35


@dataclass
class SynthConfig:
    n_products: int = 1000
    n_attributes: int = 10
    values_per_attribute: int = 20
    text_signal_rate: float = CROWD_TEXT_RATE
    image_signal_rate: float = CROWD_IMAGE_RATE
    image_dim: int = 64
    vocab_noise: int = 500
    attributes_per_product: int = 1
    description_length: int = 12
    min_images: int = 1
    max_images: int = 3
    value_skew: float = 1.0
    centroid_scale: float = 1.0
    # "independent": text and image flags drawn separately;
    # "disjoint": flags overlap as little as the two rates allow
    signal_overlap: str = "independent"

    def validate(self):
        for name in ("text_signal_rate", "image_signal_rate"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {r}")
        if self.values_per_attribute < 2:
            raise ConfigError("values_per_attribute must be at least 2")
        for name in ("n_products", "n_attributes", "image_dim", "vocab_noise", "attributes_per_product"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.attributes_per_product > self.n_attributes:
            raise ConfigError("attributes_per_product exceeds n_attributes")
        if not 0 <= self.min_images <= self.max_images:
            raise ConfigError("need 0 <= min_images <= max_images")
        if self.description_length < 0:
            raise ConfigError("description_length must be non-negative")
        if self.signal_overlap not in ("independent", "disjoint"):
            raise ConfigError(f"signal_overlap must be 'independent' or 'disjoint', got {self.signal_overlap!r}")
        return self

    def to_dict(self):
        return asdict(self)


def attribute_name(a):
    return f"attr{a:02d}"


def value_name(a, j):
    return f"a{a:02d}v{j:02d}"


def noise_word(n):
    return f"w{n:04d}"


def value_distribution(config):
    ranks = np.arange(1, config.values_per_attribute + 1, dtype=np.float64)
    w = ranks ** -config.value_skew
    return w / w.sum()


def most_common_rate(config):
    """Probability that a pair carries its attribute's most frequent value."""
    return float(value_distribution(config).max())


def generate_synthetic(config: SynthConfig, seed=0):
    config.validate()
    rng = np.random.default_rng(seed)
    n_attr, n_val, dim = config.n_attributes, config.values_per_attribute, config.image_dim
    centroids = rng.normal(0.0, config.centroid_scale, size=(n_attr, n_val, dim))
    probs = value_distribution(config)
    width = len(str(config.n_products - 1))
    records = []
    for p in range(config.n_products):
        attrs = np.sort(rng.choice(n_attr, size=config.attributes_per_product, replace=False))
        vals = rng.choice(n_val, size=len(attrs), p=probs)
        if config.signal_overlap == "independent":
            text_flag = rng.random(len(attrs)) < config.text_signal_rate
            image_flag = rng.random(len(attrs)) < config.image_signal_rate
        else:
            u = rng.random(len(attrs))
            text_flag = u < config.text_signal_rate
            image_flag = u >= 1.0 - config.image_signal_rate

        words = [noise_word(int(i)) for i in rng.integers(0, config.vocab_noise, size=config.description_length)]
        for a, j in zip(attrs[text_flag], vals[text_flag]):
            pos = int(rng.integers(0, len(words) + 1))
            words.insert(pos, value_name(int(a), int(j)))
        description = " ".join(words) + " ." if words else ""

        n_img = int(rng.integers(config.min_images, config.max_images + 1))
        base = np.zeros(dim)
        for a, j in zip(attrs[image_flag], vals[image_flag]):
            base += centroids[a, j]
        images = np.round(base + rng.normal(0.0, 1.0, size=(n_img, dim)), 6) if n_img else np.zeros((0, dim))

        records.append(
            ProductRecord(
                id=f"p{p:0{width}d}",
                description=description,
                images=images,
                pairs=[(attribute_name(int(a)), value_name(int(a), int(j))) for a, j in zip(attrs, vals)],
                evidence={
                    "text": [attribute_name(int(a)) for a in attrs[text_flag]],
                    "image": [attribute_name(int(a)) for a in attrs[image_flag]],
                },
            )
        )
    return records
