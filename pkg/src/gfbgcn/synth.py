"""Deterministic synthetic corpora for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .core_math import Rng
from .textgraph import Corpus, Document


def synth_corpus(n_docs: int = 200, n_classes: int = 2, vocab_size: int = 150, noise: float = 0.3,
                 seed: int = 7, min_len: int = 20, max_len: int = 60,
                 train_fraction: float = 0.7) -> Corpus:
    """Documents drawn from per-class word blocks mixed with uniform noise words.

    The vocabulary is split into ``n_classes`` disjoint blocks.  Each token
    comes from the uniform distribution over the whole vocabulary with
    probability ``noise`` and from the document's class block otherwise, so
    ``noise=0`` makes classes separable by word presence alone.  Labels are
    assigned round robin; a seeded shuffle picks the train documents.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_docs < 2 * n_classes:
        raise ValueError(f"n_docs must be >= 2 * n_classes ({2 * n_classes})")
    if vocab_size < n_classes:
        raise ValueError("vocab_size must be >= n_classes")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    gen = Rng(seed).child("synth").generator
    width = len(str(vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(vocab_size)]
    blocks = np.array_split(np.arange(vocab_size), n_classes)
    labels = [i % n_classes for i in range(n_docs)]
    n_train = int(round(train_fraction * n_docs))
    train = set(gen.permutation(n_docs)[:n_train].tolist())
    docs = []
    for i, c in enumerate(labels):
        length = int(gen.integers(min_len, max_len + 1))
        is_noise = gen.random(length) < noise
        own = gen.choice(blocks[c], size=length)
        anywhere = gen.integers(0, vocab_size, size=length)
        ids = np.where(is_noise, anywhere, own)
        docs.append(Document(f"doc{i:04d}", "train" if i in train else "test", f"class{c}",
                             " ".join(words[j] for j in ids)))
    return Corpus(docs)
