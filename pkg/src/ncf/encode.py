"""Value encodings for node features.

Three interchangeable schemes turn a 64-bit value into a fixed-width
float vector; every scheme appends one trailing missing-flag slot, which
is 1 (with a zeroed payload) when the value was absent from the snapshot.

- Binary: the low `width` bits, most significant first.
- Scalar: a single slot, value / scale, unsigned interpretation.
- Categorical: one-hot over an ordered vocabulary plus a final
  out-of-vocabulary slot for unseen values.
"""

from dataclasses import dataclass

import numpy as np


class EncodeError(Exception):
    pass


@dataclass(frozen=True)
class Binary:
    width: int = 64

    def __post_init__(self):
        if not 1 <= self.width <= 64:
            raise EncodeError(f"binary width must be in 1..64, got {self.width}")


@dataclass(frozen=True)
class Scalar:
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise EncodeError(f"scalar scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class Categorical:
    vocab: tuple

    def __post_init__(self):
        if len(set(self.vocab)) != len(self.vocab):
            raise EncodeError("categorical vocabulary has duplicates")


def payload_width(enc):
    if isinstance(enc, Binary):
        return enc.width
    if isinstance(enc, Scalar):
        return 1
    if isinstance(enc, Categorical):
        return len(enc.vocab) + 1  # one-hot slots plus OOV
    raise EncodeError(f"unknown encoding {enc!r}")


def feature_width(enc):
    """Payload width plus the trailing missing-flag slot."""
    return payload_width(enc) + 1


def encode_batch(enc, values, missing=None):
    """Encode a vector of uint64 values into an (M, feature_width) array."""
    values = np.asarray(values, dtype=np.uint64)
    m = values.shape[0]
    if missing is None:
        missing = np.zeros(m, dtype=bool)
    else:
        missing = np.asarray(missing, dtype=bool)
    out = np.zeros((m, feature_width(enc)), dtype=np.float64)

    if isinstance(enc, Binary):
        shifts = np.arange(enc.width - 1, -1, -1, dtype=np.uint64)
        out[:, :enc.width] = ((values[:, None] >> shifts[None, :]) & np.uint64(1))
    elif isinstance(enc, Scalar):
        out[:, 0] = values.astype(np.float64) / enc.scale
    elif isinstance(enc, Categorical):
        vocab = np.asarray(enc.vocab, dtype=np.uint64)
        order = np.argsort(vocab, kind="stable")
        pos = np.searchsorted(vocab[order], values)
        pos = np.clip(pos, 0, len(vocab) - 1) if len(vocab) else pos
        if len(vocab):
            hit = vocab[order][pos] == values
            slot = np.where(hit, order[pos], len(vocab))
        else:
            slot = np.full(m, 0, dtype=np.int64)
        out[np.arange(m), slot] = 1.0
    else:
        raise EncodeError(f"unknown encoding {enc!r}")

    out[missing, :] = 0.0
    out[:, -1] = missing.astype(np.float64)
    return out


def encode_value(enc, value, missing=False):
    """Single-value convenience wrapper around encode_batch."""
    return encode_batch(enc, np.asarray([value], dtype=np.uint64),
                        np.asarray([missing]))[0]


def vocab_from_values(values):
    """Categorical vocabulary from observed values, ascending order."""
    return Categorical(tuple(int(v) for v in sorted(set(int(x) for x in values))))


def scale_from_values(values):
    """Scalar scale from observed values: their maximum, at least 1."""
    values = [int(v) for v in values]
    return Scalar(float(max(values, default=1) or 1))
