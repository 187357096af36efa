"""Value encodings: binary, scalar, categorical."""

import numpy as np
import pytest

from ncf.encode import (Binary, Categorical, EncodeError, Scalar,
                        encode_batch, encode_value, feature_width,
                        payload_width, scale_from_values, vocab_from_values)


def test_binary_small():
    out = encode_value(Binary(8), 5)
    assert out.tolist() == [0, 0, 0, 0, 0, 1, 0, 1, 0]


def test_binary_msb_first():
    out = encode_value(Binary(64), 1 << 63)
    assert out[0] == 1.0
    assert out[1:64].sum() == 0.0
    out = encode_value(Binary(64), 1)
    assert out[63] == 1.0


def test_binary_reconstructs():
    rng = np.random.RandomState(0)
    values = rng.randint(0, 2 ** 63, size=50, dtype=np.uint64)
    feats = encode_batch(Binary(64), values)
    shifts = np.arange(63, -1, -1, dtype=np.uint64)
    back = (feats[:, :64].astype(np.uint64) << shifts).sum(axis=1)
    assert np.array_equal(back.astype(np.uint64), values)


def test_missing_zeroes_payload():
    out = encode_value(Binary(8), 0xFF, missing=True)
    assert out[:8].sum() == 0.0
    assert out[8] == 1.0
    out = encode_value(Scalar(2.0), 10, missing=True)
    assert out.tolist() == [0.0, 1.0]


def test_scalar():
    assert encode_value(Scalar(80.0), 40).tolist() == [0.5, 0.0]
    assert encode_value(Scalar(1.0), 3)[0] == 3.0


def test_categorical():
    enc = Categorical((3, 7, 9))
    assert feature_width(enc) == 5  # three slots + OOV + missing flag
    assert encode_value(enc, 7).tolist() == [0, 1, 0, 0, 0]
    assert encode_value(enc, 9).tolist() == [0, 0, 1, 0, 0]
    # unseen value lands in the out-of-vocabulary slot
    assert encode_value(enc, 5).tolist() == [0, 0, 0, 1, 0]


def test_categorical_unsorted_vocab():
    enc = Categorical((9, 3, 7))
    assert encode_value(enc, 9).tolist() == [1, 0, 0, 0, 0]
    assert encode_value(enc, 3).tolist() == [0, 1, 0, 0, 0]


def test_categorical_rows_one_hot():
    enc = Categorical((1, 2, 4, 8))
    rng = np.random.RandomState(1)
    values = rng.randint(0, 10, size=40, dtype=np.uint64)
    feats = encode_batch(enc, values)
    assert np.all(feats[:, :-1].sum(axis=1) == 1.0)


def test_validation():
    with pytest.raises(EncodeError):
        Binary(0)
    with pytest.raises(EncodeError):
        Binary(65)
    with pytest.raises(EncodeError):
        Scalar(0.0)
    with pytest.raises(EncodeError):
        Categorical((1, 1))


def test_widths():
    assert payload_width(Binary(64)) == 64
    assert feature_width(Binary(64)) == 65
    assert feature_width(Scalar(4.0)) == 2
    assert feature_width(Categorical(tuple(range(10)))) == 12


def test_batch_matches_single():
    rng = np.random.RandomState(2)
    values = rng.randint(0, 1 << 16, size=20, dtype=np.uint64)
    missing = rng.rand(20) < 0.3
    for enc in (Binary(16), Scalar(100.0), Categorical((1, 5, 9))):
        batch = encode_batch(enc, values, missing)
        rows = [encode_value(enc, v, m) for v, m in zip(values, missing)]
        assert np.array_equal(batch, np.stack(rows))


def test_fit_helpers():
    assert vocab_from_values([9, 3, 7, 3]).vocab == (3, 7, 9)
    assert scale_from_values([5, 80]).scale == 80.0
    assert scale_from_values([]).scale == 1.0
    assert scale_from_values([0]).scale == 1.0
