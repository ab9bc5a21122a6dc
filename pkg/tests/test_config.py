import json

import pytest

from maex.config import PROFILES, load_config, save_config
from maex.errors import ConfigError


def test_paper_profile():
    cfg = load_config(profile="paper")
    assert (cfg.embed_dim, cfg.text.window, cfg.text.filters) == (1024, 5, 600)
    assert cfg.image.feature_dim == 4096


def test_desk_profile_default():
    cfg = load_config()
    assert cfg.profile == "desk"
    assert (cfg.embed_dim, cfg.text.window, cfg.text.filters) == (64, 3, 64)
    assert cfg.train.batch_size == 64 and cfg.train.patience == 3 and cfg.train.negatives == 1
    assert cfg.candidates == "all" and cfg.optimizer.kind == "adam"


def test_overrides_typed():
    cfg = load_config(overrides=["fusion.variant=gmu", "optimizer.lr=0.01", "train.epochs=2", "text.finetune_embeddings=no"])
    assert cfg.fusion.variant == "gmu" and cfg.optimizer.lr == 0.01 and cfg.train.epochs == 2
    assert cfg.text.finetune_embeddings is False and not cfg.text.trains_embeddings


def test_embedding_training_default():
    assert load_config().text.trains_embeddings
    assert not load_config(overrides=["text.embeddings_path=glove.txt"]).text.trains_embeddings
    assert load_config(overrides=["text.embeddings_path=glove.txt", "text.finetune_embeddings=true"]).text.trains_embeddings


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": "paper", "fusion": {"variant": "text"}, "seed": 4}))
    cfg = load_config(p, overrides=["seed=5"])
    assert cfg.embed_dim == 1024 and cfg.fusion.variant == "text" and cfg.seed == 5


def test_round_trip_and_hash(tmp_path):
    cfg = load_config(overrides=["fusion.variant=image"])
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.hash() == cfg.hash()
    assert load_config(overrides=["seed=1"]).hash() != load_config().hash()


@pytest.mark.parametrize(
    "override",
    ["fusion.variant=attention", "nope=1", "text.nope=1", "text.dropout=1.0", "train.epochs=x", "candidates=some", "embed_dim=0"],
)
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_unknown_profile():
    with pytest.raises(ConfigError):
        load_config(profile="huge")
    assert set(PROFILES) == {"desk", "paper"}
