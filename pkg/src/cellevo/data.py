"""Character quantization, dataset loading, splitting and synthesis.

Text is lowercased and mapped to indices over a fixed alphabet; unknown
characters and padding share index 0, so encoding is a total function.
All randomized operations are deterministic per seed and preserve input
order in their outputs.
"""

from __future__ import annotations

import csv
import hashlib
import string
from dataclasses import dataclass

import numpy as np

from cellevo.errors import ConfigError

# 70 symbols: 26 lowercase letters, 10 digits, 33 punctuation/special
# characters (space included), and newline.  Index 0 stays reserved for
# padding and unknown characters.
DEFAULT_SYMBOLS = (
    string.ascii_lowercase
    + string.digits
    + " -,;.!?:'\"/\\|_@#$%^&*~`+=<>()[]{}"
    + "\n"
)

MAX_SENTENCE_LENGTH = 256


class Alphabet:
    """Ordered symbol list; lookup maps symbol i to index i+1 and anything
    else to 0."""

    def __init__(self, symbols: str = DEFAULT_SYMBOLS):
        if len(set(symbols)) != len(symbols):
            raise ConfigError("alphabet contains duplicate characters")
        self.symbols = symbols
        self._index = {ch: i + 1 for i, ch in enumerate(symbols)}

    def __len__(self):
        return len(self.symbols)

    @property
    def vocab_size(self) -> int:
        # +1 for the pad/unknown row
        return len(self.symbols) + 1

    def index(self, ch: str) -> int:
        return self._index.get(ch, 0)

    @classmethod
    def from_file(cls, path) -> "Alphabet":
        """Symbols read verbatim from a file; a trailing newline, if
        present, is the newline symbol itself."""
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read())


@dataclass
class LabeledDataset:
    """Encoded samples: X holds fixed-length index rows, y class labels."""

    X: np.ndarray
    y: np.ndarray
    class_count: int
    vocab_size: int

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.y[idx], self.class_count, self.vocab_size)


def encode_text(text: str, alphabet: Alphabet, max_len: int = MAX_SENTENCE_LENGTH):
    """Lowercase, map to indices, truncate to max_len, right-pad with 0."""
    out = np.zeros(max_len, dtype=np.int64)
    lookup = alphabet._index
    for i, ch in enumerate(text.lower()[:max_len]):
        out[i] = lookup.get(ch, 0)
    return out


def encode_samples(samples, alphabet: Alphabet, class_count: int,
                   max_len: int = MAX_SENTENCE_LENGTH) -> LabeledDataset:
    """Encode (label, text) pairs, preserving order."""
    n = len(samples)
    X = np.zeros((n, max_len), dtype=np.int64)
    y = np.zeros(n, dtype=np.int64)
    for i, (label, text) in enumerate(samples):
        X[i] = encode_text(text, alphabet, max_len)
        y[i] = label
    return LabeledDataset(X, y, class_count, alphabet.vocab_size)


@dataclass
class CsvLoad:
    samples: list          # (label, text) pairs, file order
    class_histogram: dict  # label -> count
    class_count: int


def load_csv(path, expected_classes=None) -> CsvLoad:
    """Load `class_index,"title","description"` rows (1-based classes).

    Labels come out 0-based; title and description are joined with a single
    space.  Malformed rows and out-of-range classes raise with the row
    number.
    """
    samples = []
    histogram = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if len(row) != 3:
                raise ValueError("%s row %d: expected 3 fields, got %d" % (path, row_no, len(row)))
            try:
                cls = int(row[0])
            except ValueError:
                raise ValueError("%s row %d: class index %r is not an integer" % (path, row_no, row[0]))
            if cls < 1 or (expected_classes is not None and cls > expected_classes):
                raise ValueError("%s row %d: unknown class %d" % (path, row_no, cls))
            label = cls - 1
            samples.append((label, row[1] + " " + row[2]))
            histogram[label] = histogram.get(label, 0) + 1
    class_count = expected_classes if expected_classes is not None else (
        max(histogram) + 1 if histogram else 0
    )
    return CsvLoad(samples, histogram, class_count)


def _class_indices(y):
    by_class = {}
    for i, label in enumerate(y):
        by_class.setdefault(int(label), []).append(i)
    return by_class


def split_train_validation(dataset: LabeledDataset, train_count: int, test_count: int,
                           seed: int):
    """Stratified split so validation:reduced equals test:original-train.

    Selections are drawn per class and reassembled in original order, so
    re-running with the same seed yields identical membership.
    """
    if train_count <= 0 or test_count <= 0:
        raise ConfigError("train_count and test_count must be positive")
    rng = np.random.default_rng(seed)
    ratio = test_count / (train_count + test_count)
    by_class = _class_indices(dataset.y)
    val_idx = []
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < 2:
            raise ValueError("class %d has fewer than 2 samples" % label)
        n_val = round(len(idx) * ratio)
        perm = rng.permutation(len(idx))
        val_idx.extend(idx[p] for p in perm[:n_val])
    val_mask = np.zeros(len(dataset), dtype=bool)
    val_mask[val_idx] = True
    return dataset.subset(np.flatnonzero(~val_mask)), dataset.subset(np.flatnonzero(val_mask))


def subsample(dataset: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Stratified random fraction, deterministic per seed; order preserved."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must be in (0, 1], got %r" % fraction)
    if fraction == 1.0:
        return dataset.subset(np.arange(len(dataset)))
    rng = np.random.default_rng(seed)
    by_class = _class_indices(dataset.y)
    keep = []
    for label in sorted(by_class):
        idx = by_class[label]
        n_keep = round(len(idx) * fraction)
        perm = rng.permutation(len(idx))
        keep.extend(idx[p] for p in perm[:n_keep])
    keep.sort()
    return dataset.subset(np.array(keep, dtype=np.int64))


@dataclass
class SynthData:
    samples: list   # (label, text) pairs
    markers: list   # one distinct digit 4-gram per class


def synth_dataset(rng, class_count: int, n: int, length: int = 64,
                  marker_len: int = 4) -> SynthData:
    """Planted-marker classification task with Bayes accuracy 1.0.

    Each class owns a distinct digit marker (two digits alternating, e.g.
    "3737") inserted at a random position into random lowercase background
    text, so the marker can never occur by chance and substring search
    recovers every label.
    """
    if class_count < 2:
        raise ConfigError("class_count must be >= 2, got %d" % class_count)
    if length < marker_len:
        raise ConfigError("length must be >= marker length")
    markers = []
    while len(markers) < class_count:
        d, e = rng.integers(0, 10, size=2)
        m = ((str(d) + str(e)) * marker_len)[:marker_len]
        if d != e and m not in markers:
            markers.append(m)
    letters = string.ascii_lowercase
    samples = []
    for i in range(n):
        label = i % class_count
        bg = "".join(letters[d] for d in rng.integers(0, 26, size=length))
        pos = int(rng.integers(0, length - marker_len + 1))
        samples.append((label, bg[:pos] + markers[label] + bg[pos + marker_len :]))
    return SynthData(samples, markers)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
