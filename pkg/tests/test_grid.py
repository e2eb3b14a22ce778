import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from midss.exceptions import DimensionError, ParseError
from midss.grid import (
    argmax_channels,
    decode_mdg1,
    elementwise_mix,
    encode_mdg1,
    fork_rng,
    is_one_hot,
    load_mdg1,
    make_rng,
    one_hot,
    save_mdg1,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_mix_identities():
    rng = make_rng(0)
    a, b = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    assert np.array_equal(elementwise_mix(a, b, np.ones((3, 4))), a)
    assert np.array_equal(elementwise_mix(a, b, np.zeros((3, 4))), b)


def test_mix_midpoint():
    out = elementwise_mix(np.array([[[2.0]]]), np.array([[[4.0]]]), np.array([[0.5]]))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 3.0


def test_mix_shape_errors():
    with pytest.raises(DimensionError):
        elementwise_mix(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        elementwise_mix(np.zeros((2, 2, 1)), np.zeros((2, 2, 1)), np.zeros((3, 2)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.data())
def test_mix_partition(h, w, c, data):
    a = data.draw(arrays(np.float64, (h, w, c), elements=finite))
    b = data.draw(arrays(np.float64, (h, w, c), elements=finite))
    m = data.draw(arrays(np.float64, (h, w), elements=st.sampled_from([0.0, 1.0])))
    total = elementwise_mix(a, b, m) + elementwise_mix(b, a, m)
    assert np.array_equal(total, a + b)


def test_argmax_examples():
    assert np.array_equal(argmax_channels(np.array([[[0.1, 0.9]]])), [[[0, 1]]])
    assert np.array_equal(argmax_channels(np.array([[[0.5, 0.5]]])), [[[1, 0]]])
    uniform = np.full((3, 3, 3), 1 / 3)
    assert np.all(argmax_channels(uniform)[..., 0] == 1)


@given(arrays(np.float64, (4, 3, 3), elements=st.floats(0, 1)))
def test_argmax_idempotent(p):
    once = argmax_channels(p)
    assert is_one_hot(once)
    assert np.array_equal(argmax_channels(once), once)


def test_argmax_needs_two_channels():
    with pytest.raises(DimensionError):
        argmax_channels(np.ones((2, 2, 1)))


def test_one_hot_range():
    with pytest.raises(DimensionError):
        one_hot(np.array([[0, 2]]), 2)


def test_fork_determinism():
    a = fork_rng(7, 0).random(8)
    assert np.array_equal(a, fork_rng(7, 0).random(8))
    assert not np.array_equal(a, fork_rng(7, 1).random(8))
    assert not np.array_equal(a, fork_rng(8, 0).random(8))


def test_fork_ignores_parent_consumption():
    parent = make_rng(3)
    first = fork_rng(parent, 5).random(4)
    parent.random(100)
    assert np.array_equal(first, fork_rng(parent, 5).random(4))
    assert np.array_equal(first, fork_rng(3, 5).random(4))


def test_make_rng_same_seed_same_stream():
    assert np.array_equal(make_rng(7).random(16), make_rng(7).random(16))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.data())
def test_mdg1_roundtrip(h, w, c, data):
    g = data.draw(arrays(np.float32, (h, w, c), elements=st.floats(-1e6, 1e6, width=32)))
    buf = encode_mdg1(g)
    assert buf[:4] == b"MDG1" and len(buf) == 16 + 4 * h * w * c
    out, end = decode_mdg1(buf)
    assert end == len(buf)
    assert np.array_equal(out, g.astype(np.float64))


def test_mdg1_layout_is_little_endian_row_major():
    g = np.arange(6, dtype=np.float64).reshape(1, 3, 2)
    buf = encode_mdg1(g)
    assert buf[4:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.array_equal(np.frombuffer(buf[16:], "<f4"), np.arange(6))


def test_mdg1_errors(tmp_path):
    buf = encode_mdg1(np.ones((2, 2, 1)))
    with pytest.raises(ParseError) as e:
        decode_mdg1(b"XXXX" + buf[4:])
    assert e.value.offset == 0
    with pytest.raises(ParseError) as e:
        decode_mdg1(buf[:-3])
    assert e.value.offset == len(buf) - 3
    with pytest.raises(ParseError):
        decode_mdg1(buf[:10])
    p = tmp_path / "g.mdg1"
    save_mdg1(np.ones((2, 2, 1)), p)
    assert np.array_equal(load_mdg1(p), np.ones((2, 2, 1)))
    p.write_bytes(buf + b"\0")
    with pytest.raises(ParseError):
        load_mdg1(p)
