"""Corpus -> heterogeneous document/word graph.

Node order is documents first (corpus order), then words (vocabulary order,
which is sorted lexicographically).  Edge weights:

* document-word: tf * log(N / df), raw term count, natural log
* word-word: PMI from sliding-window presence counts, kept only when > 0
* self loops: 1
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core_math import Rng, to_csr

SPLITS = ("train", "val", "test")

_EDGE_PUNCT = re.compile(r"^[\W_]+|[\W_]+$")


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    split: str
    label: str
    text: str


@dataclass
class Corpus:
    documents: list[Document]

    def __post_init__(self):
        ids = [d.doc_id for d in self.documents]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise CorpusFormatError(f"duplicate doc_id {dup!r}")
        for d in self.documents:
            if d.split not in ("train", "test"):
                raise CorpusFormatError(f"doc {d.doc_id!r}: split must be train or test, got {d.split!r}")
        splits = {d.split for d in self.documents}
        if splits != {"train", "test"}:
            raise CorpusFormatError("corpus needs at least one train and one test document")

    def __len__(self):
        return len(self.documents)

    @property
    def labels(self) -> list[str]:
        """Sorted distinct label strings."""
        return sorted({d.label for d in self.documents})


def read_corpus(path) -> Corpus:
    """Read ``doc_id<TAB>split<TAB>label<TAB>text`` lines."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t", 3)
            if len(parts) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            doc_id, split, label, text = parts
            if split not in ("train", "test"):
                raise CorpusFormatError(f"{path}:{lineno}: split must be train or test, got {split!r}")
            docs.append(Document(doc_id, split, label, text))
    try:
        return Corpus(docs)
    except CorpusFormatError as e:
        raise CorpusFormatError(f"{path}: {e}") from None


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in corpus.documents:
            fh.write(f"{d.doc_id}\t{d.split}\t{d.label}\t{d.text}\n")


def read_stopwords(path=None) -> frozenset[str]:
    """One word per line; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("gfbgcn.data").joinpath("stopwords_en.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def preprocess(raw_text: str, stopwords=frozenset()) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop stopwords.

    Internal apostrophes and hyphens survive ("don't", "co-occur"); a token
    made only of punctuation disappears.
    """
    tokens = []
    for piece in raw_text.lower().split():
        tok = _EDGE_PUNCT.sub("", piece)
        if tok and tok not in stopwords:
            tokens.append(tok)
    return tokens


@dataclass
class Vocabulary:
    words: list[str]
    index: dict[str, int]
    doc_freq: np.ndarray            # documents containing each word
    n_windows: int                  # W
    window_counts: np.ndarray       # W(i)
    pair_counts: dict[tuple[int, int], int]  # W(i, j), i < j
    docs: list[list[int]] = field(repr=False, default_factory=list)  # filtered token ids per doc

    def __len__(self):
        return len(self.words)


def _windows(ids: list[int], window_size: int):
    if len(ids) <= window_size:
        yield ids
        return
    for start in range(len(ids) - window_size + 1):
        yield ids[start:start + window_size]


def _count_windows(docs: list[list[int]], n_words: int, window_size: int):
    n_windows = 0
    window_counts = np.zeros(n_words, dtype=np.int64)
    codes, weights = [], []
    for ids in docs:
        arr = np.asarray(ids, dtype=np.int64)
        if len(arr) <= window_size:
            wins = arr[None, :]
        else:
            wins = np.lib.stride_tricks.sliding_window_view(arr, window_size)
        n_windows += wins.shape[0]
        if wins.shape[1] == 0:
            continue
        wins = np.sort(wins, axis=1)
        first = np.ones(wins.shape, dtype=bool)
        first[:, 1:] = wins[:, 1:] != wins[:, :-1]
        np.add.at(window_counts, wins[first], 1)
        w = wins.shape[1]
        pa, pb = np.triu_indices(w, k=1)
        ok = first[:, pa] & first[:, pb]
        # rows are sorted, so wins[:, pa] < wins[:, pb] wherever both are first occurrences
        c = wins[:, pa][ok] * n_words + wins[:, pb][ok]
        if c.size:
            u, cnt = np.unique(c, return_counts=True)
            codes.append(u)
            weights.append(cnt)
    pair_counts: dict[tuple[int, int], int] = {}
    if codes:
        allc = np.concatenate(codes)
        allw = np.concatenate(weights)
        u, inv = np.unique(allc, return_inverse=True)
        tot = np.bincount(inv, weights=allw).astype(np.int64)
        for code, cnt in zip(u.tolist(), tot.tolist()):
            pair_counts[divmod(code, n_words)] = cnt
    return n_windows, window_counts, pair_counts


def build_vocab(corpus: Corpus, min_freq: int = 5, window_size: int = 20,
                stopwords=frozenset()) -> Vocabulary:
    """Frequency-filtered vocabulary plus sliding-window statistics.

    A word is kept when its total count over the corpus (after stopword
    removal) is at least ``min_freq``.  Window statistics run over each
    document's filtered token stream; a document no longer than
    ``window_size`` counts as one window.  W(i) and W(i, j) count windows,
    not occurrences.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    tokenized = [preprocess(d.text, stopwords) for d in corpus.documents]
    freq = Counter(t for toks in tokenized for t in toks)
    words = sorted(w for w, c in freq.items() if c >= min_freq)
    if not words:
        raise ValueError(f"empty vocabulary after filtering with min_freq={min_freq}")
    index = {w: i for i, w in enumerate(words)}
    docs = [[index[t] for t in toks if t in index] for toks in tokenized]
    doc_freq = np.zeros(len(words), dtype=np.int64)
    for ids in docs:
        for i in set(ids):
            doc_freq[i] += 1
    n_windows, window_counts, pair_counts = _count_windows(docs, len(words), window_size)
    return Vocabulary(words, index, doc_freq, n_windows, window_counts, pair_counts, docs)


def tfidf(corpus: Corpus, vocab: Vocabulary) -> list[tuple[int, int, float]]:
    """(doc, word, tf * log(N / df)) for every word present in a doc; zero weights omitted."""
    n_docs = len(corpus)
    edges = []
    for d, ids in enumerate(vocab.docs):
        for w, tf in sorted(Counter(ids).items()):
            weight = tf * math.log(n_docs / vocab.doc_freq[w])
            if weight != 0.0:
                edges.append((d, w, weight))
    return edges


def pmi(vocab: Vocabulary) -> list[tuple[int, int, float]]:
    """(i, j, PMI) for i < j with strictly positive PMI."""
    W = vocab.n_windows
    if W < 1:
        raise ValueError("PMI needs at least one window")
    wc = vocab.window_counts
    edges = []
    for (i, j), wij in sorted(vocab.pair_counts.items()):
        value = math.log((wij / W) / ((wc[i] / W) * (wc[j] / W)))
        if value > 0.0:
            edges.append((i, j, value))
    return edges


def assemble_adjacency(tfidf_edges, pmi_edges, n_docs: int, n_words: int) -> sp.csr_matrix:
    """Symmetric self-looped adjacency over docs-then-words node order."""
    n = n_docs + n_words
    rows, cols, vals = list(range(n)), list(range(n)), [1.0] * n
    seen = set()
    for d, w, v in tfidf_edges:
        if not (0 <= d < n_docs and 0 <= w < n_words):
            raise IndexError(f"tf-idf edge ({d}, {w}) out of range")
        key = (d, n_docs + w)
        if key in seen:
            raise ValueError(f"duplicate tf-idf edge {key}")
        seen.add(key)
        rows += [d, n_docs + w]
        cols += [n_docs + w, d]
        vals += [v, v]
    for i, j, v in pmi_edges:
        if not (0 <= i < n_words and 0 <= j < n_words) or i == j:
            raise IndexError(f"pmi edge ({i}, {j}) out of range")
        key = (n_docs + min(i, j), n_docs + max(i, j))
        if key in seen:
            raise ValueError(f"duplicate pmi edge {key}")
        seen.add(key)
        rows += [key[0], key[1]]
        cols += [key[1], key[0]]
        vals += [v, v]
    return to_csr(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def normalize_adjacency(A: sp.csr_matrix) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2 with weighted degrees (row sums, self loop included)."""
    deg = np.asarray(A.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise ValueError(f"node {bad} has non-positive degree {deg[bad]}")
    coo = A.tocoo()
    data = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    return to_csr(sp.coo_matrix((data, (coo.row, coo.col)), shape=A.shape))


def split_dataset(train_ids, val_fraction: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Carve a validation subset of size round(val_fraction * |train|) out of ``train_ids``.

    Returns ``(train_rest, val)`` as sorted index arrays.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    train_ids = np.asarray(sorted(train_ids), dtype=np.int64)
    n_val = int(math.floor(val_fraction * len(train_ids) + 0.5))
    if n_val == 0 or n_val == len(train_ids):
        raise ValueError(f"validation split of {n_val} out of {len(train_ids)} training docs is degenerate")
    perm = rng.generator.permutation(len(train_ids))
    val = np.sort(train_ids[perm[:n_val]])
    rest = np.sort(train_ids[perm[n_val:]])
    return rest, val


@dataclass
class TextGraph:
    n_docs: int
    n_words: int
    A: sp.csr_matrix
    labels: np.ndarray          # class index per document
    splits: list[str]           # train / val / test per document
    class_names: list[str]
    doc_ids: list[str]
    words: list[str]
    A_norm: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        n = self.n_docs + self.n_words
        if self.A.shape != (n, n):
            raise ValueError(f"adjacency shape {self.A.shape} does not match {n} nodes")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != self.n_docs or len(self.splits) != self.n_docs:
            raise ValueError("labels/splits must have one entry per document")
        if any(s not in SPLITS for s in self.splits):
            raise ValueError("splits must be train, val or test")
        if self.A_norm is None:
            self.A_norm = normalize_adjacency(self.A)

    @property
    def n_nodes(self) -> int:
        return self.n_docs + self.n_words

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def mask(self, split: str) -> np.ndarray:
        """Boolean node mask (length n_nodes) for one split."""
        m = np.zeros(self.n_nodes, dtype=bool)
        m[:self.n_docs] = np.asarray(self.splits) == split
        return m

    @property
    def train_mask(self):
        return self.mask("train")

    @property
    def val_mask(self):
        return self.mask("val")

    @property
    def test_mask(self):
        return self.mask("test")

    def node_labels(self) -> np.ndarray:
        """Class index per node; -1 for word nodes."""
        y = np.full(self.n_nodes, -1, dtype=np.int64)
        y[:self.n_docs] = self.labels
        return y

    def with_validation(self, val_fraction: float, rng: Rng) -> "TextGraph":
        """Copy with a random validation subset moved out of the training docs."""
        train = [i for i, s in enumerate(self.splits) if s in ("train", "val")]
        _, val = split_dataset(train, val_fraction, rng)
        splits = ["test" if s == "test" else "train" for s in self.splits]
        for i in val:
            splits[i] = "val"
        return replace(self, splits=splits)


def build_graph(corpus: Corpus, stopwords=frozenset(), window_size: int = 20,
                min_freq: int = 5) -> TextGraph:
    vocab = build_vocab(corpus, min_freq, window_size, stopwords)
    A = assemble_adjacency(tfidf(corpus, vocab), pmi(vocab), len(corpus), len(vocab))
    class_names = corpus.labels
    cls = {c: i for i, c in enumerate(class_names)}
    return TextGraph(
        n_docs=len(corpus), n_words=len(vocab), A=A,
        labels=[cls[d.label] for d in corpus.documents],
        splits=[d.split for d in corpus.documents],
        class_names=class_names,
        doc_ids=[d.doc_id for d in corpus.documents],
        words=list(vocab.words))


# -- textgraph v1 file -------------------------------------------------------

def write_graph(graph: TextGraph, path) -> None:
    """Header, COO triplets of the raw adjacency (17 significant digits), node block."""
    coo = graph.A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"textgraph v1 {graph.n_docs} {graph.n_words} {coo.nnz}"]
    lines += [f"{r} {c} {v:.17g}" for r, c, v in
              zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist())]
    lines.append(f"classes {graph.n_classes}")
    lines += graph.class_names
    lines.append("docs")
    lines += [f"{d}\t{s}\t{y}" for d, s, y in zip(graph.doc_ids, graph.splits, graph.labels.tolist())]
    lines.append("words")
    lines += graph.words
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class GraphFormatError(ValueError):
    pass


def read_graph(path) -> TextGraph:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise GraphFormatError(f"{path}: unexpected end of file while reading {what}")
        pos += 1
        return lines[pos - 1]

    try:
        head = take("header").split()
        if len(head) != 5 or head[:2] != ["textgraph", "v1"]:
            raise GraphFormatError(f"{path}: not a 'textgraph v1' file")
        n_docs, n_words, nnz = map(int, head[2:])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            r, c, v = take("edges").split()
            rows[k], cols[k], vals[k] = int(r), int(c), float(v)
        tag, n_classes = take("classes").split()
        if tag != "classes":
            raise GraphFormatError(f"{path}:{pos}: expected 'classes'")
        class_names = [take("class names") for _ in range(int(n_classes))]
        if take("docs") != "docs":
            raise GraphFormatError(f"{path}:{pos}: expected 'docs'")
        doc_ids, splits, labels = [], [], []
        for _ in range(n_docs):
            d, s, y = take("docs").split("\t")
            doc_ids.append(d)
            splits.append(s)
            labels.append(int(y))
        if take("words") != "words":
            raise GraphFormatError(f"{path}:{pos}: expected 'words'")
        words = [take("words") for _ in range(n_words)]
    except ValueError as e:
        if isinstance(e, GraphFormatError):
            raise
        raise GraphFormatError(f"{path}:{pos}: {e}") from None
    n = n_docs + n_words
    A = to_csr(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))
    if A.nnz != nnz:
        raise GraphFormatError(f"{path}: duplicate or zero entries in adjacency")
    return TextGraph(n_docs, n_words, A, labels, splits, class_names, doc_ids, words)
