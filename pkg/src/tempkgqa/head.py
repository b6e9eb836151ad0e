"""Trainable answer head over indicator vectors and question tokens.

The score of an answer candidate is a softmax over ``feature @ scoring``
where the feature is the weighted mean of four language-model-width vectors:
the three projected indicators and the mean embedding of the question's
tokens.  The answer space is the entity vocabulary followed by the time
vocabulary, so one scoring matrix covers both answer types.

Training minimises cross-entropy against the gold answers (mean over golds
for multi-answer questions) and updates the token embeddings, the scoring
matrix, and the indicator projection jointly; gradients flow through the
projection because the forward pass re-projects the stored encoder-width
indicator vectors on every step.  The four mixing weights stay fixed at
1/4 so the feature remains the plain mean.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .indicators import IndicatorSet, Projection
from .prompts import PromptBundle

UNKNOWN_TOKEN = "<unk>"

_TOKEN_PATTERN = re.compile(r"[a-z0-9]+")


class HeadError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase split on whitespace and punctuation."""
    return _TOKEN_PATTERN.findall(text.lower())


@dataclass(frozen=True)
class AssembledInput:
    """One scoring-ready example: virtual vectors plus the text parts.

    ``vectors`` rows are the projected subject/relation/object indicators;
    ``indicators`` keeps the encoder-width source so training can re-project.
    """

    vectors: np.ndarray  # (3, d_llm)
    instruction_text: str
    question_text: str
    answer_text: str | None = None
    indicators: IndicatorSet | None = None


def assemble(indicators: IndicatorSet, bundle: PromptBundle) -> AssembledInput:
    """Pair an indicator set with a rendered instruction prompt."""
    question = bundle.substitutions.get("question")
    if question is None:
        raise HeadError("bundle does not carry a question substitution")
    answer = bundle.substitutions.get("answer") or None
    return AssembledInput(
        vectors=np.stack([indicators.sub_proj, indicators.rel_proj, indicators.obj_proj]),
        instruction_text=bundle.text,
        question_text=question,
        answer_text=answer,
        indicators=indicators,
    )


@dataclass
class HeadParams:
    token_vocab: dict[str, int]      # token -> row, UNKNOWN_TOKEN at row 0
    token_emb: np.ndarray            # (n_tokens, d_llm)
    scoring: np.ndarray              # (d_llm, n_answers)
    mix: np.ndarray                  # (4,), fixed at 1/4 each
    answer_labels: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.token_emb.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(
            dict(self.token_vocab),
            self.token_emb.copy(),
            self.scoring.copy(),
            self.mix.copy(),
            self.answer_labels,
        )


def init_head(
    texts: Iterable[str], answer_labels: Sequence[str], d_llm: int, seed: int
) -> HeadParams:
    """Build the token vocabulary from ``texts`` (first-appearance order,
    unknown token first) and draw the trainable matrices."""
    if d_llm < 1:
        raise HeadError("d_llm must be >= 1")
    if not answer_labels:
        raise HeadError("need at least one answer label")
    vocab: dict[str, int] = {UNKNOWN_TOKEN: 0}
    for text in texts:
        for token in tokenize(text):
            vocab.setdefault(token, len(vocab))
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_llm)
    return HeadParams(
        token_vocab=vocab,
        token_emb=rng.uniform(-scale, scale, size=(len(vocab), d_llm)),
        scoring=rng.uniform(-scale, scale, size=(d_llm, len(answer_labels))),
        mix=np.full(4, 0.25),
        answer_labels=tuple(answer_labels),
    )


def _token_rows(params: HeadParams, text: str) -> np.ndarray:
    tokens = tokenize(text) or [UNKNOWN_TOKEN]
    return np.array([params.token_vocab.get(t, 0) for t in tokens])


def _feature(params: HeadParams, vectors: np.ndarray, token_rows: np.ndarray) -> np.ndarray:
    question_vec = params.token_emb[token_rows].mean(axis=0)
    parts = np.vstack([vectors, question_vec])
    return params.mix @ parts


def score(example: AssembledInput, params: HeadParams) -> np.ndarray:
    """Answer distribution for one example; strictly positive, sums to one."""
    if example.vectors.shape != (3, params.dim):
        raise HeadError(
            f"vector block {example.vectors.shape} does not match head width {params.dim}"
        )
    feature = _feature(params, example.vectors, _token_rows(params, example.question_text))
    logits = feature @ params.scoring
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def predict_topk(example: AssembledInput, params: HeadParams, k: int) -> list[str]:
    """Top-``k`` answer labels by descending probability, ties broken by
    ascending answer id."""
    if k < 1:
        raise HeadError("k must be >= 1")
    probs = score(example, params)
    order = np.argsort(-probs, kind="stable")
    return [params.answer_labels[i] for i in order[:k]]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeadTrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 4
    batch_size: int = 8
    seed: int = 0


TrainExample = tuple[AssembledInput, Sequence[int]]


@dataclass
class HeadGradients:
    token_emb: np.ndarray
    scoring: np.ndarray
    projection: np.ndarray


def loss_and_grads(
    batch: Sequence[TrainExample], params: HeadParams, projection: Projection
) -> tuple[float, HeadGradients]:
    """Summed multi-gold cross-entropy over ``batch`` with gradients for the
    token embeddings, the scoring matrix, and the projection."""
    grads = HeadGradients(
        np.zeros_like(params.token_emb),
        np.zeros_like(params.scoring),
        np.zeros_like(projection.weight),
    )
    total = 0.0
    n_answers = params.scoring.shape[1]
    for example, golds in batch:
        if not golds:
            raise HeadError("training example without gold answers")
        if max(golds) >= n_answers or min(golds) < 0:
            raise HeadError("gold answer index outside the answer space")
        indicators = example.indicators
        if indicators is None:
            raise HeadError("training requires encoder-width indicators")
        enhanced = np.stack([indicators.sub_vec, indicators.rel_vec, indicators.obj_vec])
        vectors = enhanced @ projection.weight
        token_rows = _token_rows(params, example.question_text)
        question_vec = params.token_emb[token_rows].mean(axis=0)
        parts = np.vstack([vectors, question_vec])
        feature = params.mix @ parts

        logits = feature @ params.scoring
        shifted = logits - logits.max()
        log_norm = np.log(np.exp(shifted).sum())
        probs = np.exp(shifted - log_norm)
        total += float(log_norm - shifted[list(golds)].mean())

        d_logits = probs.copy()
        for gold in golds:
            d_logits[gold] -= 1.0 / len(golds)
        grads.scoring += np.outer(feature, d_logits)
        d_feature = params.scoring @ d_logits
        d_parts = np.outer(params.mix, d_feature)
        d_question = d_parts[3]
        np.add.at(grads.token_emb, token_rows, d_question / len(token_rows))
        grads.projection += enhanced.T @ d_parts[:3]
    return total, grads


def train(
    dataset: Sequence[TrainExample],
    params: HeadParams,
    projection: Projection,
    config: HeadTrainConfig,
) -> tuple[HeadParams, Projection, list[float]]:
    """Seeded mini-batch SGD; returns trained copies and per-epoch summed loss."""
    if not dataset:
        raise HeadError("empty training dataset")
    if config.batch_size < 1 or config.epochs < 0:
        raise HeadError("bad training config")
    params = params.copy()
    projection = projection.copy()
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = loss_and_grads(batch, params, projection)
            total += loss
            step = config.learning_rate / len(batch)
            params.token_emb -= step * grads.token_emb
            params.scoring -= step * grads.scoring
            projection.weight -= step * grads.projection
        losses.append(total)
    return params, projection, losses
