"""Monte-Carlo search for the sampling mask with the best validation log-likelihood.

The score of a mask is the mean over validation records of the summed
per-pathology log-likelihood of the true labels under the trained model, with
probabilities clamped to [1e-7, 1 - 1e-7]. Up to a mask-independent constant
this estimates the mutual information between the masked k-space and labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .sampling import (MaskPrior, SamplingMask, apply_mask, count_masks, draw_mask,
                       enumerate_masks, write_mask)

PROB_CLAMP = 1e-7
EXHAUSTIVE_LIMIT = 100_000
DEFAULT_CANDIDATES = 512


@dataclass(frozen=True)
class MaskScore:
    mask: SamplingMask
    score: float

    def to_dict(self):
        return {"sampled_lines": list(self.mask.sampled_lines), "score": self.score}


@dataclass
class SearchResult:
    best: MaskScore
    candidates: list = field(default_factory=list)
    exhaustive: bool = False

    @property
    def mask(self):
        return self.best.mask

    @property
    def best_index(self):
        return next(i for i, c in enumerate(self.candidates) if c is self.best)

    def scores_payload(self):
        return {
            "exhaustive": self.exhaustive,
            "best_index": self.best_index,
            "best_score": self.best.score,
            "candidates": [dict(index=i, **c.to_dict()) for i, c in enumerate(self.candidates)],
        }

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_mask(directory / "mask.json", self.mask)
        (directory / "scores.json").write_text(json.dumps(self.scores_payload(), indent=2) + "\n")


def log_likelihood(probs, labels):
    """Per-record sum over pathologies of log q(y | x), clamped."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(labels).astype(bool)
    return np.where(y, np.log(p), np.log1p(-p)).reshape(len(p), -1).sum(axis=1)


def score_mask(model, val_set, mask: SamplingMask, batch_size=100) -> MaskScore:
    if model.config.mode != "kspace":
        raise ContractError("mask scoring needs a kspace-mode model")
    if len(val_set) == 0:
        raise ConfigError("validation set is empty")
    total = 0.0
    for start in range(0, len(val_set), batch_size):
        x = apply_mask(val_set.kspace[start:start + batch_size], mask)
        probs = model.predict_proba(x, batch_size=batch_size)
        total += log_likelihood(probs, val_set.labels[start:start + batch_size]).sum()
    return MaskScore(mask, float(total / len(val_set)))


def candidate_masks(prior: MaskPrior, n_candidates, rng, exhaustive=False):
    if exhaustive:
        total = count_masks(prior.cols, prior.n_lines)
        if total > EXHAUSTIVE_LIMIT:
            raise ConfigError(f"exhaustive search over {total} masks exceeds {EXHAUSTIVE_LIMIT}")
        return list(enumerate_masks(prior.rows, prior.cols, prior.n_lines))
    if n_candidates < 1:
        raise ConfigError(f"need at least one candidate, got {n_candidates}")
    return [draw_mask(prior, rng) for _ in range(n_candidates)]


def search_mask(model, val_set, rate, n_candidates=DEFAULT_CANDIDATES, prior: MaskPrior | None = None,
                rng=None, exhaustive="never", batch_size=100) -> SearchResult:
    """Score candidates drawn from ``prior`` and keep the best (earliest wins ties).

    ``exhaustive`` is ``"never"``, ``"always"`` or ``"auto"``; ``auto`` enumerates
    every mask when there are at most ``EXHAUSTIVE_LIMIT`` of them.
    """
    rows, cols = val_set.shape
    if prior is None:
        prior = MaskPrior.from_rate(rows, cols, rate)
    rng = np.random.default_rng(0) if rng is None else rng
    if exhaustive not in ("never", "always", "auto"):
        raise ConfigError(f"exhaustive must be never/always/auto, got {exhaustive!r}")
    use_all = exhaustive == "always" or (
        exhaustive == "auto" and count_masks(cols, prior.n_lines) <= EXHAUSTIVE_LIMIT)
    scored = [score_mask(model, val_set, m, batch_size) for m in candidate_masks(prior, n_candidates, rng, use_all)]
    best = scored[0]
    for cand in scored[1:]:
        if cand.score > best.score:
            best = cand
    return SearchResult(best=best, candidates=scored, exhaustive=use_all)
