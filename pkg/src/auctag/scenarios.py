"""Experimental condition generators: splits, subsampling, imbalance, synth data.

Everything here is deterministic in its seed and produces exact counts, so
conditions can be rebuilt bit-for-bit from a manifest.  Sampling is always
without replacement; a pool that cannot supply the requested counts is a hard
error naming the shortfall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from ._hashing import derive_seed
from .corpus import (
    DEFAULT_LABEL_CODES,
    ContextWindow,
    Corpus,
    LabelSet,
    Sentence,
    corpus_from_sentences,
)

T = TypeVar("T")

KIND_LOW_RESOURCE = "low_resource"
KIND_TRAIN_SHIFT = "imbalance_train_shift"
KIND_TRAIN_TEST_SHIFT = "imbalance_train_test_shift"
SCENARIO_KINDS = (KIND_LOW_RESOURCE, KIND_TRAIN_SHIFT, KIND_TRAIN_TEST_SHIFT)

DEFAULT_SIZES = (25, 50, 100, 200, 400, 800)
DEFAULT_RATIOS = (0.01, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80)


def round_half_up(x: float) -> int:
    """Round with .5 going up (Python's round() is banker's rounding)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = KIND_LOW_RESOURCE
    sizes: tuple[int, ...] = DEFAULT_SIZES
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    target_class: str = "FP"
    partitions_per_condition: int = 10
    train_n: int = 100
    test_n: int = 50

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be non-empty positive integers")
        if not self.ratios or any(not 0.0 < r < 1.0 for r in self.ratios):
            raise ValueError("ratios must be non-empty reals in (0,1)")
        if self.partitions_per_condition < 1:
            raise ValueError("partitions_per_condition must be >= 1")
        if self.train_n < 2 or self.test_n < 1:
            raise ValueError("train_n must be >= 2 and test_n >= 1")

    @property
    def conditions(self) -> tuple[int, ...] | tuple[float, ...]:
        return self.sizes if self.kind == KIND_LOW_RESOURCE else self.ratios


def split_sessions(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus]:
    """Assign whole sessions to train/test by seeded shuffle; no session straddles."""
    S = len(corpus.sessions)
    if S < 2:
        raise ValueError(f"need at least 2 sessions to split, got {S}")
    n_train = round_half_up(spec.train_fraction * S)
    if not 1 <= n_train <= S - 1:
        raise ValueError(
            f"train_fraction {spec.train_fraction} leaves an empty side for {S} sessions"
        )
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    order = rng.permutation(S)
    train_ids = [corpus.sessions[i] for i in order[:n_train]]
    test_ids = [corpus.sessions[i] for i in order[n_train:]]
    return corpus.subset(train_ids), corpus.subset(test_ids)


def sample_low_resource(pool: Sequence[T], size: int, seed: int) -> list[T]:
    """Uniform sample without replacement, exact size, deterministic in seed."""
    if size < 1:
        raise ValueError(f"sample size must be positive, got {size}")
    if size > len(pool):
        raise ValueError(f"sample size {size} exceeds pool size {len(pool)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.permutation(len(pool))[:size]
    return [pool[i] for i in idx]


def binarize(
    windows: Sequence[tuple[ContextWindow, str]], target_class: str, label_set: LabelSet
) -> list[tuple[ContextWindow, int]]:
    """Map labels to 1 (target class) / 0 (everything else); order preserved."""
    if target_class not in label_set:
        raise ValueError(f"unknown target class {target_class!r}")
    return [(w, 1 if label == target_class else 0) for w, label in windows]


def make_imbalanced(
    pool: Sequence[tuple[T, int]], ratio: float, n: int, seed: int
) -> list[tuple[T, int]]:
    """Draw exactly max(1, round(ratio*n)) positives and n-p negatives, shuffled.

    Positive counts use round-half-up with a floor of one positive, so a 1%
    ratio at n=100 yields exactly one positive.  Sampling is without
    replacement; an insufficient pool raises with the shortfall.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0,1), got {ratio}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    positives = [item for item in pool if item[1] == 1]
    negatives = [item for item in pool if item[1] == 0]
    p = max(1, round_half_up(ratio * n))
    q = n - p
    if len(positives) < p:
        raise ValueError(
            f"need {p} positives, pool has {len(positives)} (short {p - len(positives)})"
        )
    if len(negatives) < q:
        raise ValueError(
            f"need {q} negatives, pool has {len(negatives)} (short {q - len(negatives)})"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [positives[i] for i in rng.permutation(len(positives))[:p]]
    chosen += [negatives[i] for i in rng.permutation(len(negatives))[:q]]
    return [chosen[i] for i in rng.permutation(n)]


def build_condition(
    train_pool: Sequence[tuple[T, int]],
    test_pool: Sequence[tuple[T, int]],
    spec: ScenarioSpec,
    ratio: float,
    seed: int,
) -> tuple[list[tuple[T, int]], list[tuple[T, int]]]:
    """One imbalance condition: shifted train set, test set per the shift kind.

    Train-shift leaves the test pool untouched (same items, same order);
    train+test shift resamples the test set to the same ratio at test_n.
    """
    if spec.kind not in (KIND_TRAIN_SHIFT, KIND_TRAIN_TEST_SHIFT):
        raise ValueError(f"build_condition applies to imbalance kinds, got {spec.kind!r}")
    train = make_imbalanced(train_pool, ratio, spec.train_n, derive_seed(seed, "train"))
    if spec.kind == KIND_TRAIN_SHIFT:
        test = list(test_pool)
    else:
        test = make_imbalanced(test_pool, ratio, spec.test_n, derive_seed(seed, "test"))
    return train, test


def synth_corpus(
    n_sessions: int,
    sentences_per_session: int,
    K: int,
    class_priors: Sequence[float],
    separability: float,
    vocab_size: int,
    seed: int,
    codes: Sequence[str] | None = None,
) -> Corpus:
    """Desk-scale synthetic dialogue corpus with controllable class signal.

    Each sentence's label is drawn from class_priors; each token comes from a
    class-specific vocabulary with probability `separability`, else from a
    shared vocabulary.  At separability 1.0 class vocabularies are disjoint
    (perfectly learnable); at 0.0 text carries no label signal.
    """
    if n_sessions < 1 or sentences_per_session < 1:
        raise ValueError("n_sessions and sentences_per_session must be >= 1")
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.shape != (K,) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("class_priors must be K non-negative reals summing to 1")
    if not 0.0 <= separability <= 1.0:
        raise ValueError(f"separability must be in [0,1], got {separability}")
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    if codes is None:
        codes = list(DEFAULT_LABEL_CODES[:K])
        codes += [f"C{i:02d}" for i in range(len(codes), K)]
    label_set = LabelSet(tuple(codes))
    if label_set.K != K:
        raise ValueError(f"{label_set.K} codes supplied for K={K}")

    rng = np.random.Generator(np.random.PCG64(seed))
    sentences: list[Sentence] = []
    for s in range(n_sessions):
        sid = f"S{s:04d}"
        turn = 0
        left_in_turn = int(rng.integers(1, 4))
        speaker = "tutor"
        sent_in_turn = 0
        for _ in range(sentences_per_session):
            if left_in_turn == 0:
                turn += 1
                sent_in_turn = 0
                left_in_turn = int(rng.integers(1, 4))
                speaker = "student" if speaker == "tutor" else "tutor"
            k = int(rng.choice(K, p=priors))
            n_tokens = int(rng.integers(3, 9))
            tokens = []
            for _ in range(n_tokens):
                word = int(rng.integers(0, vocab_size))
                if rng.random() < separability:
                    tokens.append(f"c{k}w{word}")
                else:
                    tokens.append(f"w{word}")
            sentences.append(
                Sentence(
                    session_id=sid,
                    turn_index=turn,
                    sentence_index=sent_in_turn,
                    speaker=speaker,
                    text=" ".join(tokens),
                    label=codes[k],
                )
            )
            sent_in_turn += 1
            left_in_turn -= 1
    return corpus_from_sentences(sentences, label_set)
