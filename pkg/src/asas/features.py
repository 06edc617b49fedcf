"""Feature extractors for short answers, fitted on the train split only.

Five blocks, concatenated in a fixed order:

  sentence embeddings (optional, from an external table)
  | TF-IDF rows projected onto the top eigenvectors of the term Gram matrix
  | prompt-overlap counts on letter-only "minutiae" text
  | fuzzy occurrence counts of 90 key n-grams (30 each of orders 1..3)
  | ten surface text statistics

The assembled matrix is standardized per dimension to mean 0 / sd 1
using train statistics; constant train columns map to all zeros.
"""
from __future__ import annotations

import difflib
import re
import string
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingTable, PromptCorpus, ScoredResponse
from .errors import InsufficientClasses, MissingEmbedding, RankDeficient
from .serialize import Artifact, fmt_float

MINUTIAE_LENGTHS = range(5, 20)  # 15 substring lengths
NGRAM_ORDERS = (1, 2, 3)
NGRAMS_PER_ORDER = 30
TEXT_STATS_DIM = 10

# Fixed 150-word English stopword list, versioned with the artifact.
STOPWORDS = frozenset("""
a about above after again against all along already although always am among an and
another any anything are around as at away back be because become been before being below
between both but by came can cannot come could did do does doing down during each even
ever every few for from further get give go had has have having he her here hers herself
him himself his how however i if in into is it its itself just may me might more most
much my myself no nor not now of off on once only or other our ours ourselves out over
own same she should so some such than that the their theirs them themselves then there
these they this those through to too under until up very was we were what when where
which while who whom why will with would you your yours yourself yourselves
""".split())


def normalize_text(s: str) -> str:
    """Lowercase and keep letters only, in order.

    Whitespace, digits, and punctuation all disappear; this is the
    "minutiae" form used for substring overlap against the prompt.
    """
    return "".join(ch for ch in s.lower() if ch.isalpha())


def minutiae_overlap(response: str, prompt: str) -> np.ndarray:
    """Distinct substring overlap counts between response and prompt.

    Component i counts the distinct substrings of length 5+i of the
    normalized response that also occur in the normalized prompt, for
    lengths 5 through 19 (15 dimensions).
    """
    r = normalize_text(response)
    p = normalize_text(prompt)
    out = np.zeros(len(MINUTIAE_LENGTHS), dtype=float)
    for i, length in enumerate(MINUTIAE_LENGTHS):
        if len(r) < length or len(p) < length:
            continue
        response_subs = {r[j:j + length] for j in range(len(r) - length + 1)}
        prompt_subs = {p[j:j + length] for j in range(len(p) - length + 1)}
        out[i] = len(response_subs & prompt_subs)
    return out


def _tokens(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class KeyNgram:
    """A selected key term; text is None for padding slots."""

    text: str | None
    order: int
    score: float


def _chi_squared(present_by_class: Counter, class_totals: Counter, n_docs: int) -> float:
    present_total = sum(present_by_class.values())
    absent_total = n_docs - present_total
    if present_total == 0 or absent_total == 0:
        return 0.0
    chi = 0.0
    for cls, n_cls in class_totals.items():
        observed_present = present_by_class.get(cls, 0)
        observed_absent = n_cls - observed_present
        expected_present = present_total * n_cls / n_docs
        expected_absent = absent_total * n_cls / n_docs
        chi += (observed_present - expected_present) ** 2 / expected_present
        chi += (observed_absent - expected_absent) ** 2 / expected_absent
    return chi


def select_key_ngrams(
    train: list[tuple[str, int]], n_per_order: int = NGRAMS_PER_ORDER
) -> list[KeyNgram]:
    """Pick the n-grams most associated with the score class.

    Word n-grams (orders 1..3) over lowercased whitespace tokens are
    ranked by the chi-squared statistic of (document presence x score
    class); the top n_per_order of each order are kept, ties broken
    lexicographically. Orders with too few distinct n-grams are padded
    with always-zero slots so the feature block width is fixed.
    """
    class_totals = Counter(score for _, score in train)
    if len(class_totals) < 2:
        raise InsufficientClasses("key n-gram selection needs >= 2 score classes")
    n_docs = len(train)
    tokenized = [(_tokens(text), score) for text, score in train]

    selected: list[KeyNgram] = []
    for order in NGRAM_ORDERS:
        present_by_class: dict[str, Counter] = {}
        for toks, score in tokenized:
            grams = {" ".join(toks[i:i + order]) for i in range(len(toks) - order + 1)}
            for gram in grams:
                present_by_class.setdefault(gram, Counter())[score] += 1
        ranked = sorted(
            present_by_class,
            key=lambda g: (-_chi_squared(present_by_class[g], class_totals, n_docs), g),
        )
        top = ranked[:n_per_order]
        selected.extend(
            KeyNgram(text=g, order=order, score=_chi_squared(present_by_class[g], class_totals, n_docs))
            for g in top
        )
        selected.extend(
            KeyNgram(text=None, order=order, score=0.0) for _ in range(n_per_order - len(top))
        )
    return selected


def similarity_ratio(a: str, b: str) -> float:
    """2M / (|a| + |b|) where M is the total length of matching blocks
    found by recursive longest-common-contiguous-block matching."""
    return difflib.SequenceMatcher(None, a, b, autojunk=False).ratio()


def window_ratios(text: str, ngram: str) -> np.ndarray:
    """Similarity of every same-token-length window of ``text`` to ``ngram``."""
    toks = _tokens(text)
    order = len(ngram.split())
    if len(toks) < order:
        return np.empty(0, dtype=float)
    matcher = difflib.SequenceMatcher(None, "", ngram, autojunk=False)
    ratios = np.empty(len(toks) - order + 1, dtype=float)
    for i in range(len(toks) - order + 1):
        matcher.set_seq1(" ".join(toks[i:i + order]))
        ratios[i] = matcher.ratio()
    return ratios


def near_match_count(
    response: str, key_ngrams: list[str | None], cutoff: float
) -> np.ndarray:
    """Count fuzzy occurrences of each key n-gram in the response.

    A window counts when its similarity ratio with the n-gram is at
    least ``cutoff``; with cutoff 1.0 this reduces to exact occurrence
    counting. Padding slots (None) always contribute zero.
    """
    if not 0.5 <= cutoff <= 1.0:
        raise ValueError(f"cutoff must be in [0.5, 1.0], got {cutoff}")
    out = np.zeros(len(key_ngrams), dtype=float)
    for i, gram in enumerate(key_ngrams):
        if gram is None:
            continue
        ratios = window_ratios(response, gram)
        if ratios.size:
            out[i] = float(np.sum(ratios >= cutoff))
    return out


def fit_tfidf_vocab(train_texts: list[str]) -> dict[str, tuple[int, float]]:
    """Train-unigram vocabulary with smoothed idf weights.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1; indices follow lexicographic
    term order so fits are deterministic.
    """
    n_docs = len(train_texts)
    df = Counter()
    for text in train_texts:
        df.update(set(_tokens(text)))
    vocab = {}
    for i, term in enumerate(sorted(df)):
        vocab[term] = (i, float(np.log((1 + n_docs) / (1 + df[term])) + 1.0))
    return vocab


def tfidf_matrix(texts: list[str], vocab: dict[str, tuple[int, float]]) -> np.ndarray:
    """Term-count * idf rows, L2-normalized (zero rows stay zero)."""
    X = np.zeros((len(texts), len(vocab)), dtype=float)
    for row, text in enumerate(texts):
        for term, count in Counter(_tokens(text)).items():
            hit = vocab.get(term)
            if hit is not None:
                idx, idf = hit
                X[row, idx] = count * idf
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return X / norms


def top_right_singular_vectors(X: np.ndarray, d: int) -> np.ndarray:
    """Top-d right singular vectors of X as orthonormal columns.

    Equivalent to the leading eigenvectors of the Gram matrix X^T X.
    Each column's sign is fixed so its largest-magnitude entry is
    positive. Shrinks d to the numerical rank, warning when it must.
    """
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise RankDeficient("matrix has no nonzero singular values")
    rank = int(np.sum(s > s[0] * 1e-10))
    if d > rank:
        warnings.warn(
            f"requested {d} eigenvectors but rank is {rank}; shrinking", stacklevel=2
        )
        d = rank
    projection = vt[:d].T.copy()
    for j in range(projection.shape[1]):
        col = projection[:, j]
        if col[int(np.argmax(np.abs(col)))] < 0:
            projection[:, j] = -col
    return projection


def fit_tfidf_projection(
    train_texts: list[str], d_t: int
) -> tuple[dict[str, tuple[int, float]], np.ndarray]:
    """Fit the TF-IDF vocabulary and its eigen-projection on train texts."""
    if d_t < 1:
        raise ValueError(f"d_t must be >= 1, got {d_t}")
    vocab = fit_tfidf_vocab(train_texts)
    if not vocab:
        raise RankDeficient("empty vocabulary: no train tokens")
    X = tfidf_matrix(train_texts, vocab)
    return vocab, top_right_singular_vectors(X, d_t)


_SENTENCE_SPLIT = re.compile(r"[.!?]")
_PUNCT = frozenset(string.punctuation)


def text_stats(s: str) -> np.ndarray:
    """Ten surface statistics of a text; all zeros for empty text.

    (characters, words, sentences, mean word length, mean sentence
    length in words, type-token ratio, punctuation count, digit count,
    stopword fraction, longest word length). Words are whitespace
    tokens; sentences split on . ! ?; leading/trailing whitespace is
    ignored throughout.
    """
    stripped = s.strip()
    if not stripped:
        return np.zeros(TEXT_STATS_DIM, dtype=float)
    words = stripped.split()
    sentences = [seg for seg in _SENTENCE_SPLIT.split(stripped) if seg.strip()]
    lowered = [w.lower() for w in words]
    return np.array(
        [
            len(stripped),
            len(words),
            len(sentences),
            float(np.mean([len(w) for w in words])),
            len(words) / len(sentences) if sentences else 0.0,
            len(set(lowered)) / len(words),
            sum(ch in _PUNCT for ch in stripped),
            sum(ch.isdigit() for ch in stripped),
            sum(w in STOPWORDS for w in lowered) / len(words),
            max(len(w) for w in words),
        ],
        dtype=float,
    )


def fit_standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column population mean and sd; sd stays 0 for constant columns."""
    return X.mean(axis=0), X.std(axis=0)


def apply_standardizer(X: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Standardize columns; columns with sd 0 map to all zeros."""
    safe = np.where(sd > 0.0, sd, 1.0)
    return np.where(sd > 0.0, (X - mean) / safe, 0.0)


@dataclass
class FeatureModelSpec:
    """A fitted feature extractor: everything needed to score new text."""

    tfidf_vocab: dict[str, tuple[int, float]]
    tfidf_projection: np.ndarray
    key_ngrams: list[KeyNgram]
    near_match_cutoff: float
    standardizer: tuple[np.ndarray, np.ndarray]
    embedding_dim: int | None
    prompt_minutiae: str

    @property
    def d_t(self) -> int:
        return self.tfidf_projection.shape[1]

    @property
    def feature_dim(self) -> int:
        return (
            (self.embedding_dim or 0)
            + self.d_t
            + len(MINUTIAE_LENGTHS)
            + len(self.key_ngrams)
            + TEXT_STATS_DIM
        )

    def ngram_strings(self) -> list[str | None]:
        return [g.text for g in self.key_ngrams]

    def validate(self) -> None:
        if not 0.5 <= self.near_match_cutoff <= 1.0:
            raise ValueError(f"cutoff out of range: {self.near_match_cutoff}")
        if len(self.key_ngrams) != len(NGRAM_ORDERS) * NGRAMS_PER_ORDER:
            raise ValueError(f"expected 90 key n-grams, got {len(self.key_ngrams)}")
        for order in NGRAM_ORDERS:
            n = sum(1 for g in self.key_ngrams if g.order == order)
            if n != NGRAMS_PER_ORDER:
                raise ValueError(f"expected 30 n-grams of order {order}, got {n}")
        if self.tfidf_projection.shape[0] != len(self.tfidf_vocab):
            raise ValueError("projection rows disagree with vocabulary size")
        gram = self.tfidf_projection.T @ self.tfidf_projection
        if not np.allclose(gram, np.eye(self.d_t), atol=1e-8):
            raise ValueError("projection columns are not orthonormal")
        mean, sd = self.standardizer
        if mean.shape != (self.feature_dim,) or sd.shape != (self.feature_dim,):
            raise ValueError("standardizer length disagrees with feature dimension")

    def to_artifact(self) -> Artifact:
        vocab_rows = [None] * len(self.tfidf_vocab)
        for term, (idx, idf) in self.tfidf_vocab.items():
            vocab_rows[idx] = [term, fmt_float(idf)]
        ngram_rows = [
            [str(g.order), g.text if g.text is not None else "", fmt_float(g.score)]
            for g in self.key_ngrams
        ]
        mean, sd = self.standardizer
        return Artifact(
            kind="feature-spec",
            meta={
                "cutoff": fmt_float(self.near_match_cutoff),
                "embedding_dim": "none" if self.embedding_dim is None else str(self.embedding_dim),
                "prompt_minutiae": self.prompt_minutiae,
            },
            tables={"vocab": vocab_rows, "key_ngrams": ngram_rows},
            arrays={
                "projection": self.tfidf_projection,
                "std_mean": mean,
                "std_sd": sd,
            },
        )

    @classmethod
    def from_artifact(cls, art: Artifact) -> "FeatureModelSpec":
        vocab = {
            term: (idx, float(idf)) for idx, (term, idf) in enumerate(art.tables["vocab"])
        }
        key_ngrams = [
            KeyNgram(text=text if text else None, order=int(order), score=float(score))
            for order, text, score in art.tables["key_ngrams"]
        ]
        emb = art.meta["embedding_dim"]
        spec = cls(
            tfidf_vocab=vocab,
            tfidf_projection=art.arrays["projection"],
            key_ngrams=key_ngrams,
            near_match_cutoff=float(art.meta["cutoff"]),
            standardizer=(art.arrays["std_mean"][0], art.arrays["std_sd"][0]),
            embedding_dim=None if emb == "none" else int(emb),
            prompt_minutiae=art.meta["prompt_minutiae"],
        )
        spec.validate()
        return spec


def _embedding_block(
    responses: list[ScoredResponse], dim: int, embeddings: EmbeddingTable | None
) -> np.ndarray:
    if embeddings is None:
        raise MissingEmbedding("spec expects embeddings but none were provided")
    if embeddings.dim != dim:
        raise MissingEmbedding(
            f"embedding table has dim {embeddings.dim}, spec expects {dim}"
        )
    block = np.empty((len(responses), dim), dtype=float)
    for i, r in enumerate(responses):
        vec = embeddings.rows.get(r.id)
        if vec is None:
            raise MissingEmbedding(f"no embedding for response {r.id!r}")
        block[i] = vec
    return block


def _raw_features(
    responses: list[ScoredResponse],
    vocab: dict[str, tuple[int, float]],
    projection: np.ndarray,
    key_ngrams: list[KeyNgram],
    cutoff: float,
    prompt_text: str,
    embedding_dim: int | None,
    embeddings: EmbeddingTable | None,
) -> np.ndarray:
    texts = [r.text for r in responses]
    grams = [g.text for g in key_ngrams]
    blocks = []
    if embedding_dim is not None:
        blocks.append(_embedding_block(responses, embedding_dim, embeddings))
    blocks.append(tfidf_matrix(texts, vocab) @ projection)
    blocks.append(np.array([minutiae_overlap(t, prompt_text) for t in texts]))
    blocks.append(np.array([near_match_count(t, grams, cutoff) for t in texts]))
    blocks.append(np.array([text_stats(t) for t in texts]))
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class FeatureMatrix:
    """Standardized feature rows in a fixed id order."""

    ids: list[str]
    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def rows_for(self, ids: list[str]) -> np.ndarray:
        index = {rid: i for i, rid in enumerate(self.ids)}
        try:
            sel = [index[rid] for rid in ids]
        except KeyError as exc:
            raise KeyError(f"id {exc.args[0]!r} not in feature matrix") from None
        return self.data[sel]


def fit_feature_model(
    corpus: PromptCorpus,
    d_t: int,
    near_match_cutoff: float,
    embeddings: EmbeddingTable | None = None,
) -> FeatureModelSpec:
    """Fit every extractor on the train split and freeze train statistics."""
    train_texts = [r.text for r in corpus.train]
    vocab, projection = fit_tfidf_projection(train_texts, d_t)
    key_ngrams = select_key_ngrams([(r.text, r.score1) for r in corpus.train])
    embedding_dim = embeddings.dim if embeddings is not None else None
    prompt_minutiae = normalize_text(corpus.prompt_text)
    raw_train = _raw_features(
        corpus.train, vocab, projection, key_ngrams, near_match_cutoff,
        prompt_minutiae, embedding_dim, embeddings,
    )
    spec = FeatureModelSpec(
        tfidf_vocab=vocab,
        tfidf_projection=projection,
        key_ngrams=key_ngrams,
        near_match_cutoff=near_match_cutoff,
        standardizer=fit_standardizer(raw_train),
        embedding_dim=embedding_dim,
        prompt_minutiae=prompt_minutiae,
    )
    spec.validate()
    return spec


def extract_features(
    responses: list[ScoredResponse],
    spec: FeatureModelSpec,
    embeddings: EmbeddingTable | None = None,
) -> FeatureMatrix:
    """Apply a fitted spec to any responses, standardizing with train stats."""
    raw = _raw_features(
        responses, spec.tfidf_vocab, spec.tfidf_projection, spec.key_ngrams,
        spec.near_match_cutoff, spec.prompt_minutiae, spec.embedding_dim, embeddings,
    )
    mean, sd = spec.standardizer
    return FeatureMatrix(ids=[r.id for r in responses], data=apply_standardizer(raw, mean, sd))


def build_features(
    corpus: PromptCorpus,
    spec: FeatureModelSpec,
    embeddings: EmbeddingTable | None = None,
) -> FeatureMatrix:
    """Feature matrix over the whole corpus in train|dev|test order."""
    return extract_features(corpus.all_responses(), spec, embeddings)


class CachedFeatureBuilder:
    """Amortizes refits across hyperparameter trials.

    The expensive pieces do not depend on the tuned parameters: the
    eigen-projection is fitted once at the maximum dimension and sliced
    (leading eigenvectors are nested), key n-grams depend only on the
    train split, and fuzzy window ratios are cached so changing the
    cutoff is a thresholding pass.
    """

    def __init__(
        self,
        corpus: PromptCorpus,
        embeddings: EmbeddingTable | None = None,
        d_t_max: int = 300,
    ):
        self.corpus = corpus
        self.embeddings = embeddings
        self.embedding_dim = embeddings.dim if embeddings is not None else None
        responses = corpus.all_responses()
        self.ids = [r.id for r in responses]
        self._n_train = len(corpus.train)
        texts = [r.text for r in responses]
        train_texts = [r.text for r in corpus.train]

        self.vocab, self._projection_full = fit_tfidf_projection(train_texts, d_t_max)
        self.key_ngrams = select_key_ngrams([(r.text, r.score1) for r in corpus.train])
        self.prompt_minutiae = normalize_text(corpus.prompt_text)

        self._tfidf_full = tfidf_matrix(texts, self.vocab) @ self._projection_full
        self._minutiae = np.array([minutiae_overlap(t, self.prompt_minutiae) for t in texts])
        self._stats = np.array([text_stats(t) for t in texts])
        self._emb = (
            _embedding_block(responses, self.embedding_dim, embeddings)
            if self.embedding_dim is not None
            else None
        )
        grams = [g.text for g in self.key_ngrams]
        self._ratios = [
            [None if g is None else window_ratios(t, g) for g in grams] for t in texts
        ]

    def _near_counts(self, cutoff: float) -> np.ndarray:
        out = np.zeros((len(self.ids), len(self.key_ngrams)), dtype=float)
        for i, per_gram in enumerate(self._ratios):
            for j, ratios in enumerate(per_gram):
                if ratios is not None and ratios.size:
                    out[i, j] = float(np.sum(ratios >= cutoff))
        return out

    def build(self, d_t: int, cutoff: float) -> tuple[FeatureModelSpec, FeatureMatrix]:
        d_eff = min(d_t, self._projection_full.shape[1])
        blocks = []
        if self._emb is not None:
            blocks.append(self._emb)
        blocks.append(self._tfidf_full[:, :d_eff])
        blocks.append(self._minutiae)
        blocks.append(self._near_counts(cutoff))
        blocks.append(self._stats)
        raw = np.concatenate(blocks, axis=1)
        mean, sd = fit_standardizer(raw[: self._n_train])
        spec = FeatureModelSpec(
            tfidf_vocab=self.vocab,
            tfidf_projection=self._projection_full[:, :d_eff].copy(),
            key_ngrams=self.key_ngrams,
            near_match_cutoff=cutoff,
            standardizer=(mean, sd),
            embedding_dim=self.embedding_dim,
            prompt_minutiae=self.prompt_minutiae,
        )
        spec.validate()
        return spec, FeatureMatrix(ids=list(self.ids), data=apply_standardizer(raw, mean, sd))
