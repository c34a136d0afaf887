"""Sampling-rate sweep over model kinds and seeds.

Kinds:
  emrt          random-mask training, mask search, fixed-mask inference
  model_fixed   retrained on the mask emrt found (needs emrt in the same cell)
  model_center  kspace-net trained and tested on the center-focused mask
  model_rss     image classifier on full-data RSS images (rate independent)
  kspace_full   kspace-net on fully sampled k-space (rate independent)

Each run writes ``train_report.json``, ``metrics.json`` and a checkpoint under
``<out>/<kind>/rate_<rate>/seed_<seed>/``; emrt runs add ``mask.json`` and
``scores.json``. The sweep writes ``sweep.csv``, ``sweep.json``,
``fixed_vs_random.csv`` (when both emrt and model_fixed ran) and figures.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import read_dataset
from .errors import ConfigError
from .evaluation import metric_report, write_sweep_csv
from .masksearch import DEFAULT_CANDIDATES, search_mask
from .sampling import MaskPrior, SamplingMask, apply_mask, center_mask, lines_for_rate
from .training import TrainConfig, train_fixed_mask, train_full, train_image_classifier, train_qval

log = logging.getLogger(__name__)

DEFAULT_RATES = (0.05, 0.08, 0.10, 0.125)
KINDS = ("emrt", "model_rss", "model_center", "model_fixed", "kspace_full")
RATE_FREE = ("model_rss", "kspace_full")


@dataclass
class SweepConfig:
    data: str = ""
    out: str = "sweep_out"
    rates: tuple = DEFAULT_RATES
    kinds: tuple = ("emrt", "model_rss", "model_center", "model_fixed")
    seeds: tuple = (0,)
    n_candidates: int = DEFAULT_CANDIDATES
    target_sensitivity: float = 0.85
    figures: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        self.rates = tuple(float(r) for r in self.rates)
        self.kinds = tuple(self.kinds)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.rates or any(not 0 < r <= 1 for r in self.rates):
            raise ConfigError(f"rates must lie in (0, 1], got {self.rates}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ConfigError(f"unknown model kinds {sorted(unknown)}")
        if "model_fixed" in self.kinds and "emrt" not in self.kinds:
            raise ConfigError("model_fixed reuses the emrt mask; add emrt to kinds")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _train_cfg(base: TrainConfig, rate, seed):
    return TrainConfig.from_dict({**base.to_dict(), "rate": rate, "seed": seed})


def _write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _evaluate(model, splits, prepare, target):
    val, test = splits["val"], splits["test"]
    val_probs = model.predict_proba(prepare(val))
    test_probs = model.predict_proba(prepare(test))
    return metric_report(val_probs, val.labels, test_probs, test.labels, val.pathologies, target)


def _finish(run_dir, kind, rate, seed, report, metrics, rows, mask=None):
    _write_json(run_dir / "train_report.json", report.to_dict())
    payload = {"kind": kind, "rate": rate, "seed": seed, "metrics": metrics,
               "mask": None if mask is None else mask.to_dict()}
    _write_json(run_dir / "metrics.json", payload)
    _finish_rows(rows, kind, rate, seed, metrics)


def run_cell(cfg: SweepConfig, splits, rate, seed, out_dir, rows, masks):
    """All rate-dependent kinds for one (rate, seed)."""
    rows_, cols = splits["train"].shape
    train_set, val_set = splits["train"], splits["val"]
    tcfg = _train_cfg(cfg.train, rate, seed)
    target = cfg.target_sensitivity

    def run_dir(kind):
        return out_dir / kind / f"rate_{rate:g}" / f"seed_{seed}"

    found = None
    if "emrt" in cfg.kinds:
        d = run_dir("emrt")
        model, report = train_qval(train_set, val_set, tcfg, checkpoint_dir=d / "checkpoint")
        prior = MaskPrior.from_rate(rows_, cols, rate, tcfg.prior, tcfg.prior_sigma)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        result = search_mask(model, val_set, rate, cfg.n_candidates, prior, rng)
        result.write(d)
        found = result.mask
        masks[("emrt", rate, seed)] = found
        metrics = _evaluate(model, splits, lambda ds: apply_mask(ds.kspace, found), target)
        _finish(d, "emrt", rate, seed, report, metrics, rows, found)
        log.info("emrt rate=%g seed=%d mask=%s", rate, seed, found.sampled_lines)
    if "model_fixed" in cfg.kinds:
        d = run_dir("model_fixed")
        model, report = train_fixed_mask(train_set, val_set, found, tcfg, checkpoint_dir=d / "checkpoint")
        metrics = _evaluate(model, splits, lambda ds: apply_mask(ds.kspace, found), target)
        _finish(d, "model_fixed", rate, seed, report, metrics, rows, found)
    if "model_center" in cfg.kinds:
        d = run_dir("model_center")
        cmask = center_mask(cols, lines_for_rate(cols, rate), rows=rows_)
        masks[("model_center", rate, seed)] = cmask
        model, report = train_fixed_mask(train_set, val_set, cmask, tcfg, checkpoint_dir=d / "checkpoint")
        metrics = _evaluate(model, splits, lambda ds: apply_mask(ds.kspace, cmask), target)
        _finish(d, "model_center", rate, seed, report, metrics, rows, cmask)


def run_rate_free(cfg: SweepConfig, splits, kind, seed, out_dir):
    """Train a rate-independent baseline once; returns its metrics."""
    tcfg = _train_cfg(cfg.train, 1.0, seed)
    d = out_dir / kind / f"seed_{seed}"
    if kind == "model_rss":
        model, report = train_image_classifier(splits["train"], splits["val"], tcfg, checkpoint_dir=d / "checkpoint")
        metrics = _evaluate(model, splits, lambda ds: ds.images, cfg.target_sensitivity)
    else:
        model, report = train_full(splits["train"], splits["val"], tcfg, checkpoint_dir=d / "checkpoint")
        metrics = _evaluate(model, splits, lambda ds: ds.kspace, cfg.target_sensitivity)
    _write_json(d / "train_report.json", report.to_dict())
    _write_json(d / "metrics.json", {"kind": kind, "rate": None, "seed": seed, "metrics": metrics, "mask": None})
    return report, metrics


def run_sweep(cfg: SweepConfig, splits=None):
    """Run every (rate, kind, seed) cell; returns the CSV rows."""
    if splits is None:
        if not cfg.data:
            raise ConfigError("sweep needs a dataset path")
        splits = read_dataset(cfg.data)
    missing = {"train", "val", "test"} - set(splits)
    if missing:
        raise ConfigError(f"dataset is missing splits {sorted(missing)}")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, masks = [], {}
    for seed in cfg.seeds:
        for kind in RATE_FREE:
            if kind not in cfg.kinds:
                continue
            report, metrics = run_rate_free(cfg, splits, kind, seed, out_dir)
            for rate in cfg.rates:
                _finish_rows(rows, kind, rate, seed, metrics)
        for rate in cfg.rates:
            run_cell(cfg, splits, rate, seed, out_dir, rows, masks)
    rows.sort(key=lambda r: (r["seed"], r["rate"], KINDS.index(r["model_kind"]), r["pathology"]))
    write_sweep_csv(out_dir / "sweep.csv", rows)
    _write_json(out_dir / "sweep.json", {
        "config": cfg.to_dict(),
        "rows": rows,
        "masks": [{"kind": k, "rate": r, "seed": s, "sampled_lines": list(m.sampled_lines)}
                  for (k, r, s), m in sorted(masks.items())],
    })
    comparison = fixed_vs_random_rows(rows)
    if comparison:
        write_comparison_csv(out_dir / "fixed_vs_random.csv", comparison)
    if cfg.figures:
        from . import report
        report.sweep_figures(rows, masks, out_dir, comparison)
    return rows


COMPARISON_COLUMNS = ("rate", "pathology", "seed", "auroc_random", "auroc_fixed", "difference")


def fixed_vs_random_rows(rows):
    """Pair emrt (random-mask training) with model_fixed on the same mask.

    ``difference`` is random minus fixed. No ordering is implied; the table
    is a report, not a check.
    """
    by_key = {(r["model_kind"], r["rate"], r["pathology"], r["seed"]): r for r in rows}
    out = []
    for (kind, rate, name, seed), row in sorted(by_key.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][3])):
        if kind != "emrt" or ("model_fixed", rate, name, seed) not in by_key:
            continue
        a, b = row["auroc"], by_key[("model_fixed", rate, name, seed)]["auroc"]
        diff = None if a is None or b is None else a - b
        out.append({"rate": rate, "pathology": name, "seed": seed,
                    "auroc_random": a, "auroc_fixed": b, "difference": diff})
    return out


def write_comparison_csv(path, comparison):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
        writer.writeheader()
        for row in comparison:
            writer.writerow({k: "" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                             for k in COMPARISON_COLUMNS})


def _finish_rows(rows, kind, rate, seed, metrics):
    for name, m in metrics.items():
        rows.append({"rate": rate, "pathology": name, "model_kind": kind, "auroc": m["auroc"],
                     "sens": m["sensitivity"], "spec": m["specificity"], "npv": m["npv"],
                     "ppv": m["ppv"], "seed": seed})
