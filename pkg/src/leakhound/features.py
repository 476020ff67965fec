"""Bag-of-words featurization of flows and key-confidence feature selection.

The flow text (URL, rendered headers and body) is split on a separator set,
PII values are randomized, and every distinct token becomes a binary column.
Columns are then thinned by document frequency (with oversampling for rare
PII keys), tf-idf and a stop list, and proximity to PII values.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from leakhound.ingest import HttpFlow
from leakhound.pii import FIELDS, LabeledFlow, randomize_pii
from leakhound.porter import stem

SEPARATORS = ",;{}[]/()=&?: \t\r\n"

# Common HTTP header and protocol boilerplate.
DEFAULT_STOP_WORDS = frozenset("""
content-length content-type content-encoding en-us en en_us accept accept-encoding
accept-language user-agent host connection keep-alive close cache-control no-cache
pragma gzip deflate br http https www com net org utf-8 charset text html json
application x-www-form-urlencoded cookie set-cookie date server vary etag expires
last-modified if-none-match if-modified-since origin referer upgrade-insecure-requests
mozilla dalvik okhttp linux android u build x-requested-with transfer-encoding chunked
""".split())

VOCAB_VERSION = 1
MATRIX_VERSION = 1


class EmptyVocabulary(ValueError):
    """Thresholds eliminated every token."""


def _separator_regex(separators: str) -> re.Pattern:
    return re.compile("[^" + re.escape(separators) + "]+")


_DEFAULT_TOKEN_RE = _separator_regex(SEPARATORS)


def tokenize_spans(text: str, separators: str = SEPARATORS) -> list[tuple[str, int, int]]:
    regex = _DEFAULT_TOKEN_RE if separators == SEPARATORS else _separator_regex(separators)
    return [(m.group(), m.start(), m.end()) for m in regex.finditer(text)]


def tokenize(text: str, separators: str = SEPARATORS) -> list[str]:
    """Split on separator characters, dropping empty tokens.

    >>> tokenize("a=1&b=2")
    ['a', '1', 'b', '2']
    """
    return [tok for tok, _, _ in tokenize_spans(text, separators)]


def flow_tokens(flow: HttpFlow, separators: str = SEPARATORS) -> set[str]:
    out: set[str] = set()
    for name in FIELDS:
        out.update(tokenize(flow.field_text(name), separators))
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    doc_freq: tuple[int, ...]
    tfidf: tuple[float, ...]
    n_docs: int = 0
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if not len(self.tokens) == len(self.doc_freq) == len(self.tfidf):
            raise ValueError("vocabulary columns differ in length")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {tok: j for j, tok in enumerate(self.tokens)}

    @property
    def canonical(self) -> bool:
        return "canonical" in self.provenance

    def subset(self, columns: Sequence[int], note: str) -> "Vocabulary":
        return Vocabulary(
            tuple(self.tokens[j] for j in columns),
            tuple(self.doc_freq[j] for j in columns),
            tuple(self.tfidf[j] for j in columns),
            self.n_docs,
            self.provenance + (note,),
        )


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: tuple[str, ...]
    vocabulary: Vocabulary
    values: np.ndarray
    labels: np.ndarray | None = None
    duplicate: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.uint8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        n, d = values.shape
        if n != len(self.rows) or d != len(self.vocabulary):
            raise ValueError(f"matrix shape {values.shape} does not match rows/vocabulary")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.uint8)
            if labels.shape != (n,):
                raise ValueError("label vector length mismatch")
            object.__setattr__(self, "labels", labels)
        dup = np.zeros(n, bool) if self.duplicate is None else np.asarray(self.duplicate, bool)
        object.__setattr__(self, "duplicate", dup)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select_columns(self, columns: Sequence[int], note: str = "column-slice") -> "FeatureMatrix":
        columns = list(columns)
        return FeatureMatrix(self.rows, self.vocabulary.subset(columns, note),
                             self.values[:, columns], self.labels, self.duplicate)

    def select_rows(self, rows: Sequence[int] | np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return FeatureMatrix(tuple(self.rows[i] for i in rows), self.vocabulary, self.values[rows],
                             None if self.labels is None else self.labels[rows], self.duplicate[rows])

    def without_duplicates(self) -> "FeatureMatrix":
        return self.select_rows(np.flatnonzero(~self.duplicate))


@dataclass(frozen=True)
class FeatureConfig:
    freq_t: int = 3
    tfidf_t: float | None = None      # None: use tfidf_percentile of the scores
    tfidf_percentile: float = 75.0
    stop_words: frozenset[str] = DEFAULT_STOP_WORDS
    adjacency_window: int = 1
    separators: str = SEPARATORS
    seed: int = 0

    def __post_init__(self):
        if self.freq_t < 1:
            raise ValueError("freq_t must be >= 1")
        if self.tfidf_t is not None and self.tfidf_t < 0:
            raise ValueError("tfidf_t must be >= 0")
        if self.adjacency_window < 0:
            raise ValueError("adjacency_window must be >= 0")


@dataclass
class _FlowScan:
    tokens: set[str]
    keys: set[str] = field(default_factory=set)
    near_leak: set[str] = field(default_factory=set)


def _scan_randomized(lf: LabeledFlow, cfg: FeatureConfig) -> _FlowScan:
    flow = randomize_pii(lf, cfg.seed)
    scan = _FlowScan(set())
    for name in FIELDS:
        toks = tokenize_spans(flow.field_text(name), cfg.separators)
        scan.tokens.update(t for t, _, _ in toks)
        spans = [(f.start, f.end) for f in lf.findings if f.field == name]
        if not spans:
            continue
        value_pos = [i for i, (_, s, e) in enumerate(toks)
                     if any(s < fe and fs < e for fs, fe in spans)]
        marked = set(value_pos)
        for i in value_pos:
            if i - 1 >= 0 and i - 1 not in marked:
                scan.keys.add(toks[i - 1][0])
            lo, hi = max(0, i - cfg.adjacency_window), min(len(toks), i + cfg.adjacency_window + 1)
            scan.near_leak.update(toks[k][0] for k in range(lo, hi))
    return scan


def tfidf_from_counts(df: np.ndarray, n: int) -> np.ndarray:
    df = np.asarray(df, dtype=np.float64)
    out = np.zeros_like(df)
    nz = df > 0
    out[nz] = df[nz] * np.log(n / df[nz])
    return out


def tfidf_scores(matrix: FeatureMatrix) -> np.ndarray:
    """Per-token ``tf * ln(n / df)``; on a binary matrix tf equals df."""
    n = matrix.shape[0]
    if n == 0:
        raise ValueError("tf-idf of an empty matrix")
    return tfidf_from_counts(matrix.values.sum(axis=0, dtype=np.int64), n)


def build_matrix(labeled: Sequence[LabeledFlow], cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Run the bag-of-words extraction and selection pipeline over labeled flows."""
    if not labeled:
        raise ValueError("build_matrix needs at least one flow")
    scans = [_scan_randomized(lf, cfg) for lf in labeled]
    keys = set().union(*(s.keys for s in scans))
    near_leak = set().union(*(s.near_leak for s in scans))

    token_id: dict[str, int] = {}
    row_ids: list[list[int]] = []
    for s in scans:
        row_ids.append(sorted(token_id.setdefault(t, len(token_id)) for t in s.tokens))
    names = list(token_id)
    df = np.zeros(len(names), dtype=np.int64)
    for ids in row_ids:
        df[ids] += 1

    dropped = {j for j, tok in enumerate(names) if df[j] < cfg.freq_t and tok not in keys}

    # Rare PII keys survive by duplicating the flows that carry them.
    source = list(range(len(row_ids)))
    for key in sorted(k for k in keys if df[token_id[k]] < cfg.freq_t):
        j = token_id[key]
        holders = [i for i, ids in enumerate(row_ids[:len(scans)]) if j in set(ids)]
        k = 0
        while df[j] < cfg.freq_t:
            src = holders[k % len(holders)]
            row_ids.append(row_ids[src])
            source.append(src)
            df[row_ids[src]] += 1
            k += 1

    n_rows = len(row_ids)
    kept = [j for j in range(len(names)) if j not in dropped]
    scores = tfidf_from_counts(df, n_rows)
    if cfg.tfidf_t is None:
        tfidf_t = float(np.percentile(scores[kept], cfg.tfidf_percentile)) if kept else 0.0
    else:
        tfidf_t = cfg.tfidf_t
    stops = {w.lower() for w in cfg.stop_words}
    kept = [j for j in kept if scores[j] <= tfidf_t and names[j].lower() not in stops]
    kept = [j for j in kept if names[j] not in near_leak or names[j] in keys]
    if not kept:
        raise EmptyVocabulary("feature thresholds removed every token")

    kept.sort(key=lambda j: names[j])
    col = {j: c for c, j in enumerate(kept)}
    values = np.zeros((n_rows, len(kept)), dtype=np.uint8)
    for i, ids in enumerate(row_ids):
        cols = [col[j] for j in ids if j in col]
        values[i, cols] = 1

    row_names = [labeled[s].flow.flow_id for s in source]
    n_orig = len(scans)
    for i in range(n_orig, n_rows):
        row_names[i] = f"{row_names[i]}#dup{i - n_orig + 1}"
    labels = np.array([labeled[s].label for s in source], dtype=np.uint8)
    vocab = Vocabulary(
        tuple(names[j] for j in kept),
        tuple(int(v) for v in values.sum(axis=0)),
        tuple(float(scores[j]) for j in kept),
        n_rows,
        ("algorithm1", f"freq_t={cfg.freq_t}", f"tfidf_t={tfidf_t:.6g}",
         f"stop_words={len(stops)}", f"adjacency_window={cfg.adjacency_window}",
         f"oversampled_rows={n_rows - n_orig}"),
    )
    dup = np.arange(n_rows) >= n_orig
    return FeatureMatrix(tuple(row_names), vocab, values, labels, dup)


# --- canonicalization --------------------------------------------------------

BASE64_CHARS = frozenset("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/=_-")
MAX_TOKEN_LENGTH = 70
MIN_TOKEN_LENGTH = 2


def shannon_entropy(text: str) -> float:
    if not text:
        return 0.0
    n = len(text)
    return -sum(c / n * math.log2(c / n) for c in Counter(text).values())


def is_encoded_blob(token: str, min_length: int = 20, min_entropy: float = 3.5) -> bool:
    return (len(token) >= min_length and set(token) <= BASE64_CHARS
            and shannon_entropy(token) >= min_entropy)


def canonical_token(token: str) -> str:
    # Stemming is repeated to a fixed point so canonicalization is idempotent.
    word = token.lower()
    while True:
        stemmed = stem(word)
        if stemmed == word:
            return word
        word = stemmed


def _keep_canonical(token: str) -> bool:
    return (MIN_TOKEN_LENGTH <= len(token) <= MAX_TOKEN_LENGTH) and not is_encoded_blob(token)


def _canonical_groups(tokens: Sequence[str]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for j, tok in enumerate(tokens):
        groups.setdefault(canonical_token(tok), []).append(j)
    return {c: idx for c, idx in sorted(groups.items()) if _keep_canonical(c)}


def canonicalize_features(vocab: Vocabulary) -> Vocabulary:
    """Lowercase, merge Porter stems, drop encoded blobs and bad lengths.

    Merged tokens sum their document frequencies.
    """
    groups = _canonical_groups(vocab.tokens)
    doc_freq = [sum(vocab.doc_freq[j] for j in idx) for idx in groups.values()]
    n = vocab.n_docs or max(doc_freq, default=1)
    capped = np.minimum(np.array(doc_freq, dtype=np.int64), n)
    tfidf = tfidf_from_counts(capped, n) if doc_freq else np.zeros(0)
    prov = vocab.provenance if vocab.canonical else vocab.provenance + ("canonical",)
    return Vocabulary(tuple(groups), tuple(doc_freq), tuple(float(x) for x in tfidf), vocab.n_docs, prov)


def canonicalize_matrix(matrix: FeatureMatrix) -> FeatureMatrix:
    """Apply canonicalization to the columns, OR-merging grouped columns."""
    groups = _canonical_groups(matrix.vocabulary.tokens)
    values = np.zeros((matrix.shape[0], len(groups)), dtype=np.uint8)
    for c, idx in enumerate(groups.values()):
        values[:, c] = matrix.values[:, idx].max(axis=1) if idx else 0
    if not groups:
        raise EmptyVocabulary("canonicalization removed every token")
    df = values.sum(axis=0, dtype=np.int64)
    prov = matrix.vocabulary.provenance
    if not matrix.vocabulary.canonical:
        prov = prov + ("canonical",)
    vocab = Vocabulary(tuple(groups), tuple(int(x) for x in df),
                       tuple(float(x) for x in tfidf_from_counts(df, matrix.shape[0])),
                       matrix.shape[0], prov)
    return FeatureMatrix(matrix.rows, vocab, values, matrix.labels, matrix.duplicate)


# --- key confidence ----------------------------------------------------------

@dataclass(frozen=True)
class Heuristic1Score:
    key: str
    k_pii: int
    k_all: int
    p: float

    def __post_init__(self):
        if not 0 <= self.k_pii <= self.k_all or self.k_all < 1:
            raise ValueError(f"inconsistent counts for {self.key!r}")


def heuristic1_scores(matrix: FeatureMatrix) -> list[Heuristic1Score]:
    """Share of each token's flows that leak PII; tokens in no flow are omitted."""
    if matrix.labels is None:
        raise ValueError("heuristic1_scores needs labels")
    values = matrix.values.astype(np.int64)
    k_all = values.sum(axis=0)
    k_pii = values[matrix.labels == 1].sum(axis=0)
    return [Heuristic1Score(tok, int(kp), int(ka), int(kp) / int(ka))
            for tok, kp, ka in zip(matrix.vocabulary.tokens, k_pii, k_all) if ka > 0]


def heuristic1_by_domain(matrix: FeatureMatrix, domains: Sequence[str]) -> dict[str, list[Heuristic1Score]]:
    """Key confidences computed separately per domain (one domain per row)."""
    if len(domains) != matrix.shape[0]:
        raise ValueError("one domain per matrix row required")
    domains = np.asarray(domains, dtype=object)
    return {d: heuristic1_scores(matrix.select_rows(np.flatnonzero(domains == d)))
            for d in sorted(set(domains))}


def apply_heuristic1(matrix: FeatureMatrix, threshold: float = 0.2) -> FeatureMatrix:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    index = matrix.vocabulary.index
    keep = sorted(index[s.key] for s in heuristic1_scores(matrix) if s.p > threshold)
    if not keep:
        raise EmptyVocabulary(f"no token has confidence above {threshold}")
    return matrix.select_columns(keep, f"heuristic1>{threshold:g}")


# --- applying a fitted vocabulary -------------------------------------------

def vectorize(flows: Iterable[HttpFlow], vocab: Vocabulary, labels: Sequence[bool] | None = None,
              separators: str = SEPARATORS) -> FeatureMatrix:
    """Encode flows against an existing vocabulary (no randomization, no filtering)."""
    flows = list(flows)
    index = vocab.index
    values = np.zeros((len(flows), len(vocab)), dtype=np.uint8)
    for i, flow in enumerate(flows):
        toks = flow_tokens(flow, separators)
        if vocab.canonical:
            toks = {canonical_token(t) for t in toks}
        cols = [index[t] for t in toks if t in index]
        values[i, cols] = 1
    lab = None if labels is None else np.asarray(labels, dtype=np.uint8)
    return FeatureMatrix(tuple(f.flow_id for f in flows), vocab, values, lab)


# --- serialization -----------------------------------------------------------

def dump_vocabulary(vocab: Vocabulary) -> str:
    head = f"# leakhound-vocabulary v{VOCAB_VERSION} n_docs={vocab.n_docs} filters={'|'.join(vocab.provenance)}\n"
    body = "".join(f"{t}\t{df}\t{score!r}\n" for t, df, score in zip(vocab.tokens, vocab.doc_freq, vocab.tfidf))
    return head + body


def parse_vocabulary(text: str) -> Vocabulary:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# leakhound-vocabulary v"):
        raise ValueError("not a vocabulary file")
    head = dict(part.split("=", 1) for part in lines[0].split()[3:])
    if int(lines[0].split()[2][1:]) != VOCAB_VERSION:
        raise ValueError("unsupported vocabulary version")
    tokens, dfs, scores = [], [], []
    for line in lines[1:]:
        tok, df, score = line.split("\t")
        tokens.append(tok)
        dfs.append(int(df))
        scores.append(float(score))
    prov = tuple(p for p in head.get("filters", "").split("|") if p)
    return Vocabulary(tuple(tokens), tuple(dfs), tuple(scores), int(head.get("n_docs", 0)), prov)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(dump_vocabulary(vocab), encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    return parse_vocabulary(Path(path).read_text(encoding="utf-8"))


def dump_matrix(matrix: FeatureMatrix) -> str:
    """Sparse triplet text: header, ``col``/``row`` lines, then ``i<TAB>j<TAB>1`` entries."""
    n, d = matrix.shape
    vocab = matrix.vocabulary
    out = [f"# leakhound-matrix v{MATRIX_VERSION}\n", f"shape\t{n}\t{d}\n",
           f"vocab\tn_docs={vocab.n_docs}\tfilters={'|'.join(vocab.provenance)}\n"]
    out.extend(f"col\t{j}\t{tok}\n" for j, tok in enumerate(vocab.tokens))
    for i, row in enumerate(matrix.rows):
        label = "-" if matrix.labels is None else str(int(matrix.labels[i]))
        out.append(f"row\t{i}\t{row}\t{label}\t{int(matrix.duplicate[i])}\n")
    rows, cols = np.nonzero(matrix.values)
    out.extend(f"{i}\t{j}\t1\n" for i, j in zip(rows.tolist(), cols.tolist()))
    return "".join(out)


def parse_matrix(text: str, vocab: Vocabulary | None = None) -> FeatureMatrix:
    lines = text.split("\n")
    if lines[0] != f"# leakhound-matrix v{MATRIX_VERSION}":
        raise ValueError("not a matrix file")
    _, n, d = lines[1].split("\t")
    n, d = int(n), int(d)
    head = dict(part.split("=", 1) for part in lines[2].split("\t")[1:])
    tokens, rows, labels, dup = [], [], [], []
    values = np.zeros((n, d), dtype=np.uint8)
    for line in lines[3:]:
        if not line:
            continue
        parts = line.split("\t")
        if parts[0] == "col":
            tokens.append(parts[2])
        elif parts[0] == "row":
            rows.append(parts[2])
            labels.append(None if parts[3] == "-" else int(parts[3]))
            dup.append(parts[4] == "1")
        else:
            values[int(parts[0]), int(parts[1])] = 1
    if vocab is None:
        df = values.sum(axis=0, dtype=np.int64)
        prov = tuple(p for p in head.get("filters", "").split("|") if p)
        vocab = Vocabulary(tuple(tokens), tuple(int(x) for x in df),
                           tuple(float(x) for x in tfidf_from_counts(df, max(n, 1))),
                           int(head.get("n_docs", n)), prov)
    elif list(vocab.tokens) != tokens:
        raise ValueError("matrix columns do not match the supplied vocabulary")
    lab = None if any(x is None for x in labels) else np.array(labels, dtype=np.uint8)
    return FeatureMatrix(tuple(rows), vocab, values, lab, np.array(dup, bool))


def save_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    Path(path).write_text(dump_matrix(matrix), encoding="utf-8")


def load_matrix(path: str | Path, vocab: Vocabulary | None = None) -> FeatureMatrix:
    return parse_matrix(Path(path).read_text(encoding="utf-8"), vocab)
