"""Cartesian k-space sampling masks.

A mask selects whole columns (phase-encode lines) of a DC-centered k-space
matrix. Column index ``cols // 2`` holds the zero frequency.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError


@dataclass(frozen=True)
class SamplingMask:
    rows: int
    cols: int
    sampled_lines: tuple[int, ...]
    axis: str = "cols"

    def __post_init__(self):
        lines = tuple(sorted(int(i) for i in self.sampled_lines))
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"mask dims must be positive, got {self.rows}x{self.cols}")
        if self.axis != "cols":
            raise ConfigError(f"only column masks are supported, got axis={self.axis!r}")
        if not lines:
            raise ConfigError("a sampling mask needs at least one line")
        if len(set(lines)) != len(lines):
            raise ConfigError(f"duplicate lines in mask: {lines}")
        if lines[0] < 0 or lines[-1] >= self.cols:
            raise ConfigError(f"line index out of range [0, {self.cols}): {lines}")
        object.__setattr__(self, "sampled_lines", lines)

    @property
    def n_lines(self):
        return len(self.sampled_lines)

    def line_vector(self):
        """Binary vector of length ``cols``."""
        vec = np.zeros(self.cols, dtype=bool)
        vec[list(self.sampled_lines)] = True
        return vec

    def to_dense(self):
        """Expanded binary matrix s in {0,1}^(rows x cols)."""
        return np.broadcast_to(self.line_vector(), (self.rows, self.cols)).astype(np.uint8)

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "axis": self.axis,
                "sampled_lines": list(self.sampled_lines)}

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(int(payload["rows"]), int(payload["cols"]),
                       tuple(payload["sampled_lines"]), payload.get("axis", "cols"))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad mask payload: {exc}") from exc

    @classmethod
    def full(cls, rows, cols):
        return cls(rows, cols, tuple(range(cols)))


@dataclass(frozen=True)
class MaskPrior:
    """Data-independent distribution over masks with exactly ``n_lines`` lines.

    ``mode`` is ``"uniform"`` or ``"center_weighted"``; the latter weights each
    column by a Gaussian in its distance from the center with std ``sigma``.
    """

    rows: int
    cols: int
    n_lines: int
    mode: str = "uniform"
    sigma: float | None = None

    def __post_init__(self):
        if not 1 <= self.n_lines <= self.cols:
            raise ConfigError(f"n_lines must be in [1, {self.cols}], got {self.n_lines}")
        if self.mode not in ("uniform", "center_weighted"):
            raise ConfigError(f"unknown prior mode {self.mode!r}")
        if self.mode == "center_weighted" and not (self.sigma and self.sigma > 0):
            raise ConfigError("center_weighted prior needs sigma > 0")

    @classmethod
    def from_rate(cls, rows, cols, rate, mode="uniform", sigma=None):
        return cls(rows, cols, lines_for_rate(cols, rate), mode, sigma)

    def weights(self):
        if self.mode == "uniform":
            return None
        dist = np.arange(self.cols) - self.cols // 2
        w = np.exp(-0.5 * (dist / self.sigma) ** 2)
        return w / w.sum()


def lines_for_rate(cols, rate):
    """Number of whole lines for a sampling rate: round(rate * cols), at least 1."""
    if not 0 < rate <= 1:
        raise ConfigError(f"sampling rate must be in (0, 1], got {rate}")
    return max(1, min(cols, int(round(rate * cols))))


def draw_mask(prior: MaskPrior, rng: np.random.Generator) -> SamplingMask:
    lines = rng.choice(prior.cols, size=prior.n_lines, replace=False, p=prior.weights())
    return SamplingMask(prior.rows, prior.cols, tuple(lines))


def enumerate_masks(rows, cols, n_lines):
    """Every mask with exactly ``n_lines`` lines, in lexicographic order."""
    for lines in itertools.combinations(range(cols), n_lines):
        yield SamplingMask(rows, cols, lines)


def count_masks(cols, n_lines):
    return math.comb(cols, n_lines)


def apply_mask(x, mask: SamplingMask):
    """x_s = x o s: keep sampled columns, zero the rest. Works on batched input."""
    x = np.asarray(x)
    if x.shape[-2:] != (mask.rows, mask.cols):
        raise ShapeError(f"mask {mask.rows}x{mask.cols} does not match input {x.shape}")
    return x * mask.line_vector().astype(x.real.dtype)


def sampling_rate(mask: SamplingMask) -> float:
    """Fraction of measured entries, ||s||_0 / (rows * cols)."""
    return mask.n_lines / mask.cols


def center_mask(cols, n_lines, rows=None):
    """The ``n_lines`` columns closest to ``cols // 2``; ties go to the lower index."""
    if not 1 <= n_lines <= cols:
        raise ConfigError(f"n_lines must be in [1, {cols}], got {n_lines}")
    center = cols // 2
    order = sorted(range(cols), key=lambda i: (abs(i - center), i))
    return SamplingMask(cols if rows is None else rows, cols, tuple(order[:n_lines]))


def write_mask(path, mask: SamplingMask):
    Path(path).write_text(json.dumps(mask.to_dict()) + "\n")


def read_mask(path) -> SamplingMask:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read mask file {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"mask file {path} is not JSON: {exc}", exc.pos) from exc
    if not isinstance(payload, dict):
        raise FormatError(f"mask file {path} must hold a JSON object")
    return SamplingMask.from_dict(payload)
