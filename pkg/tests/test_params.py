import struct

import numpy as np
import pytest

from maex import tensor as T
from maex.errors import CheckpointError, ConfigError, ContractError
from maex.params import (
    OptimizerConfig,
    ParameterStore,
    load_arrays,
    load_checkpoint,
    optimizer_step,
    read_manifest,
    save_checkpoint,
)
from maex.tensor import Tape, backward


def test_sgd_single_step():
    store = ParameterStore()
    store.add("theta", [2.0])
    store.set_grad("theta", [0.5])
    optimizer_step(store, OptimizerConfig(kind="sgd", lr=1.0))
    assert store["theta"].data.tolist() == [1.5]
    assert store["theta"].grad.tolist() == [0.0]


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(kind):
    store = ParameterStore()
    store.add("w", np.arange(6.0).reshape(2, 3))
    store.set_grad("w", np.zeros((2, 3)))
    optimizer_step(store, OptimizerConfig(kind=kind))
    np.testing.assert_array_equal(store["w"].data, np.arange(6.0).reshape(2, 3))


def test_adam_converges_on_quadratic():
    store = ParameterStore()
    theta = store.add("theta", [1.0])
    cfg = OptimizerConfig(kind="adam", lr=0.1)
    for _ in range(500):
        with Tape() as tape:
            loss = T.total(T.square(theta))
        backward(tape, loss)
        optimizer_step(store, cfg)
    assert abs(theta.data[0]) < 1e-3


def test_step_without_gradients_is_an_error():
    store = ParameterStore()
    store.add("w", [1.0])
    with pytest.raises(ContractError):
        optimizer_step(store, OptimizerConfig())


def test_unknown_optimizer():
    store = ParameterStore()
    store.add("w", [1.0])
    store.set_grad("w", [1.0])
    with pytest.raises(ConfigError):
        optimizer_step(store, OptimizerConfig(kind="rmsprop"))


def test_frozen_parameters_do_not_move():
    store = ParameterStore()
    frozen = store.add("table", np.ones((2, 2)), frozen=True)
    w = store.add("w", [1.0, 1.0])
    with Tape() as tape:
        loss = T.total(T.mul(T.gather_rows(frozen, [0]), T.reshape(w, (1, 2))))
    backward(tape, loss)
    optimizer_step(store, OptimizerConfig(kind="sgd", lr=0.5))
    np.testing.assert_array_equal(frozen.data, np.ones((2, 2)))
    assert w.data.tolist() == [0.5, 0.5]


def test_duplicate_names_rejected():
    store = ParameterStore()
    store.add("w", [1.0])
    with pytest.raises(ContractError):
        store.add("w", [2.0])


def test_grad_shape_matches_parameter():
    store = ParameterStore()
    store.add("w", np.zeros((3, 2)))
    assert store["w"].grad.shape == (3, 2)
    with pytest.raises(ContractError):
        store.set_grad("w", np.zeros(6))


def _store(seed=0):
    r = np.random.default_rng(seed)
    s = ParameterStore()
    s.add("a.W", r.normal(size=(3, 4)))
    s.add("a.b", r.normal(size=4))
    s.add("scalar", 2.5)
    return s


def test_checkpoint_round_trip(tmp_path):
    src = _store(0)
    save_checkpoint(src, tmp_path)
    dst = _store(1)
    load_checkpoint(dst, tmp_path)
    for name in src:
        assert src[name].data.tobytes() == dst[name].data.tobytes()


def test_checkpoint_byte_layout(tmp_path):
    src = _store(0)
    save_checkpoint(src, tmp_path)
    entries = read_manifest(tmp_path)
    assert [(n, s, o) for n, s, o, _ in entries] == [("a.W", (3, 4), 0), ("a.b", (4,), 96), ("scalar", (), 128)]
    raw = (tmp_path / "params.bin").read_bytes()
    assert len(raw) == 136
    first = struct.unpack("<d", raw[:8])[0]
    assert first == src["a.W"].data[0, 0]
    assert struct.unpack("<d", raw[128:136])[0] == 2.5
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "name=a.b shape=4 offset=96 nbytes=32" in manifest


def test_checkpoint_shape_mismatch(tmp_path):
    save_checkpoint(_store(0), tmp_path)
    other = ParameterStore()
    other.add("a.W", np.zeros((4, 3)))
    with pytest.raises(CheckpointError):
        load_checkpoint(other, tmp_path)


def test_checkpoint_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path)
