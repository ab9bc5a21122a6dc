import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maex import tensor as T
from maex.data import PAD_INDEX
from maex.encoders import (
    ImageEncoderParams,
    TextEncoderParams,
    embed_attribute,
    embed_value,
    encode_images,
    encode_images_batch,
    encode_text,
    encode_text_batch,
)
from maex.errors import CatalogError, CorpusFormatError
from maex.tensor import Tape, Tensor, backward


def text_params(rng, d=4, w=3, F=6, k=5, dropout=0.0):
    return TextEncoderParams(
        filters=Tensor(rng.normal(size=(w * d, F)), requires_grad=True),
        bias=Tensor(rng.normal(size=F), requires_grad=True),
        proj_W=Tensor(rng.normal(size=(F, k)), requires_grad=True),
        proj_b=Tensor(rng.normal(size=k), requires_grad=True),
        window=w,
        dropout=dropout,
    )


def image_params(rng, d=6, k=5, dropout=0.0):
    return ImageEncoderParams(
        W=Tensor(rng.normal(size=(d, k)), requires_grad=True),
        b=Tensor(rng.normal(size=k), requires_grad=True),
        empty=Tensor(rng.normal(size=k), requires_grad=True),
        dropout=dropout,
    )


def token_table(rng, n=12, d=4):
    t = rng.normal(size=(n, d))
    t[:2] = 0
    return Tensor(t)


def pooled_features(ids, table, p):
    """Direct loop: max over windows of relu(window @ filters + bias)."""
    ids = list(ids) + [PAD_INDEX] * max(0, p.window - len(ids))
    wins = [np.concatenate([table.data[i] for i in ids[s : s + p.window]]) for s in range(len(ids) - p.window + 1)]
    return np.max([np.maximum(w @ p.filters.data + p.bias.data, 0) for w in wins], axis=0)


def test_embed_rows(rng):
    table = Tensor(rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(embed_attribute(0, table).data, table.data[0])
    np.testing.assert_array_equal(embed_value([2, 1], table).data, table.data[[2, 1]])
    with pytest.raises(CatalogError):
        embed_value(4, table)
    with pytest.raises(CatalogError):
        embed_attribute(-1, table)


def test_embed_gradient_sparsity(rng):
    table = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    with Tape() as tape:
        loss = T.total(T.square(embed_value([1, 4, 1], table)))
    backward(tape, loss)
    used = np.zeros(6, bool)
    used[[1, 4]] = True
    assert np.all(table.grad[~used] == 0)
    assert np.all(table.grad[used] != 0)


def test_text_matches_loop_oracle(rng):
    p, table = text_params(rng), token_table(rng)
    for ids in ([2, 3, 4, 5, 6], [7], [], [3, 3, 3, 9, 10, 11, 2]):
        want = pooled_features(ids, table, p) @ p.proj_W.data + p.proj_b.data
        np.testing.assert_allclose(encode_text(ids, table, p).data, want, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 11), max_size=20))
def test_text_output_shape_any_length(ids):
    r = np.random.default_rng(0)
    assert encode_text(ids, token_table(r), text_params(r)).shape == (5,)


def test_text_empty_is_all_padding(rng):
    p, table = text_params(rng), token_table(rng)
    np.testing.assert_array_equal(encode_text([], table, p).data, encode_text([PAD_INDEX] * 3, table, p).data)


def test_text_duplicated_window_unchanged(rng):
    # a periodic sequence: repeating one period adds only windows already present
    p, table = text_params(rng), token_table(rng)
    ids = [2, 3, 4, 2, 3, 4]
    dup = ids + [2, 3, 4]
    np.testing.assert_array_equal(pooled_features(dup, table, p), pooled_features(ids, table, p))
    np.testing.assert_allclose(encode_text(dup, table, p).data, encode_text(ids, table, p).data, rtol=0, atol=1e-14)


def test_text_order_beyond_window_matters(rng):
    p, table = text_params(rng), token_table(rng)
    a = encode_text([2, 3, 4, 5, 6, 7], table, p).data
    b = encode_text([2, 5, 4, 3, 6, 7], table, p).data
    assert not np.allclose(a, b)


def test_text_batch_equals_single(rng):
    p, table = text_params(rng), token_table(rng)
    seqs = [[2, 3], [4, 5, 6, 7, 8], [], [9, 10, 11]]
    batch = encode_text_batch(seqs, table, p).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batch[i], encode_text(s, table, p).data, rtol=0, atol=1e-14)


def test_eval_mode_deterministic(rng):
    p, table = text_params(rng, dropout=0.5), token_table(rng)
    a = encode_text([2, 3, 4], table, p, "eval").data
    b = encode_text([2, 3, 4], table, p, "eval").data
    assert a.tobytes() == b.tobytes()
    ip = image_params(rng, dropout=0.5)
    x = rng.normal(size=(2, 6))
    assert encode_images(x, ip, "eval").data.tobytes() == encode_images(x, ip, "eval").data.tobytes()


def test_image_singleton(rng):
    p = image_params(rng)
    x = rng.normal(size=6)
    want = np.maximum(x @ p.W.data + p.b.data, 0)
    np.testing.assert_allclose(encode_images([x], p).data, want, rtol=0, atol=1e-12)


def test_image_empty_set(rng):
    p = image_params(rng)
    np.testing.assert_array_equal(encode_images(np.zeros((0, 6)), p).data, p.empty.data)
    out = encode_images_batch([np.zeros((0, 6)), rng.normal(size=(1, 6))], p).data
    np.testing.assert_array_equal(out[0], p.empty.data)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_image_permutation_and_duplication(seed, n):
    r = np.random.default_rng(seed)
    p = image_params(r)
    x = r.normal(size=(n, 6))
    base = encode_images(x, p).data
    # stacking more rows can change BLAS summation order by an ulp
    np.testing.assert_allclose(encode_images(x[r.permutation(n)], p).data, base, rtol=0, atol=1e-12)
    np.testing.assert_allclose(encode_images(np.vstack([x, x[:1]]), p).data, base, rtol=0, atol=1e-12)


def test_image_dimension_mismatch(rng):
    with pytest.raises(CorpusFormatError):
        encode_images(rng.normal(size=(2, 5)), image_params(rng))


def test_encoder_gradients(rng):
    from conftest import check_grads

    p, ip = text_params(rng), image_params(rng)
    table = Tensor(token_table(rng).data, requires_grad=True)
    seqs = [[2, 3, 4, 5], [6], [7, 8, 9]]
    imgs = [rng.normal(size=(2, 6)), np.zeros((0, 6)), rng.normal(size=(3, 6))]
    tgt = rng.normal(size=(3, 5))

    def build():
        out = encode_text_batch(seqs, table, p) + encode_images_batch(imgs, ip)
        return T.total(T.mul(out, Tensor(tgt)))

    params = [p.filters, p.bias, p.proj_W, p.proj_b, table, ip.W, ip.b, ip.empty]
    assert check_grads(build, params) <= 1e-6
