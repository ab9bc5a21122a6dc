import numpy as np
import pytest

from maex.data import tokenize, validate_corpus
from maex.errors import ConfigError
from maex.synth import (
    CROWD_IMAGE_RATE,
    CROWD_TEXT_RATE,
    SynthConfig,
    generate_synthetic,
    most_common_rate,
    value_distribution,
)


def test_default_rates():
    sc = SynthConfig()
    assert (sc.text_signal_rate, sc.image_signal_rate) == (0.70, 0.35)
    assert (CROWD_TEXT_RATE, CROWD_IMAGE_RATE) == (0.70, 0.35)


def test_text_rate_one_plants_every_value():
    recs = generate_synthetic(SynthConfig(n_products=300, text_signal_rate=1.0, image_signal_rate=0.0), seed=1)
    for r in recs:
        toks = set(tokenize(r.description))
        assert all(v in toks for _, v in r.pairs)


def test_text_rate_zero_plants_nothing():
    recs = generate_synthetic(SynthConfig(n_products=300, text_signal_rate=0.0), seed=1)
    values = {v for r in recs for _, v in r.pairs}
    assert not any(values & set(tokenize(r.description)) for r in recs)


def _planted_rates(recs):
    n = sum(len(r.pairs) for r in recs)
    text = sum(len(r.evidence["text"]) for r in recs) / n
    image = sum(len(r.evidence["image"]) for r in recs) / n
    return text, image


def test_turk_rates_within_two_percent():
    recs = generate_synthetic(SynthConfig(n_products=10_000), seed=3)
    text, image = _planted_rates(recs)
    assert abs(text - 0.70) <= 0.02 and abs(image - 0.35) <= 0.02
    # the recorded evidence matches the description itself
    planted = sum(v in set(tokenize(r.description)) for r in recs for _, v in r.pairs)
    assert planted == sum(len(r.evidence["text"]) for r in recs)


def test_disjoint_overlap_minimal():
    recs = generate_synthetic(SynthConfig(n_products=10_000, signal_overlap="disjoint"), seed=4)
    text, image = _planted_rates(recs)
    assert abs(text - 0.70) <= 0.02 and abs(image - 0.35) <= 0.02
    n = sum(len(r.pairs) for r in recs)
    both = sum(len(set(r.evidence["text"]) & set(r.evidence["image"])) for r in recs) / n
    assert abs(both - 0.05) <= 0.01


def test_image_clusters_follow_values():
    sc = SynthConfig(n_products=2000, text_signal_rate=0.0, image_signal_rate=1.0, attributes_per_product=1,
                     centroid_scale=3.0)
    recs = generate_synthetic(sc, seed=5)
    by_value = {}
    for r in recs:
        by_value.setdefault(r.pairs[0][1], []).append(r.images.mean(axis=0))
    means = {v: np.mean(x, axis=0) for v, x in by_value.items() if len(x) >= 20}
    # per-value clusters: within-value spread well below between-value distance
    spread = np.mean([np.linalg.norm(np.std(by_value[v], axis=0)) for v in means])
    names = sorted(means)
    between = np.mean([np.linalg.norm(means[a] - means[b]) for a in names for b in names if a < b])
    assert between > 3 * spread


def test_seed_determinism():
    a = generate_synthetic(SynthConfig(n_products=50), seed=9)
    b = generate_synthetic(SynthConfig(n_products=50), seed=9)
    c = generate_synthetic(SynthConfig(n_products=50), seed=10)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]
    assert [r.to_json() for r in a] != [r.to_json() for r in c]


def test_corpus_valid():
    recs = generate_synthetic(SynthConfig(n_products=40, min_images=0), seed=2)
    assert validate_corpus(recs) == 64


def test_most_common_rate_matches_distribution():
    sc = SynthConfig(values_per_attribute=20)
    p = value_distribution(sc)
    assert abs(p.sum() - 1) < 1e-12 and np.all(np.diff(p) <= 0)
    h20 = sum(1 / r for r in range(1, 21))
    assert abs(most_common_rate(sc) - 1 / h20) < 1e-12
    assert most_common_rate(SynthConfig(value_skew=0.0)) == pytest.approx(1 / 20)


@pytest.mark.parametrize(
    "field,value",
    [("values_per_attribute", 1), ("text_signal_rate", 1.5), ("n_products", 0), ("signal_overlap", "both")],
)
def test_invalid_config(field, value):
    sc = SynthConfig()
    setattr(sc, field, value)
    with pytest.raises(ConfigError):
        generate_synthetic(sc, seed=0)
