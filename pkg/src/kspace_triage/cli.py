"""Command-line interface.

Subcommands::

    phantom-gen   write a synthetic dataset directory
    train         train a classifier (random, fixed, full or image mode)
    search-mask   pick a sampling mask for a trained random-mask model
    eval          test-set metrics at a validation operating point
    sweep         rate x kind x seed experiment grid

Every subcommand takes ``--seed``, ``--config FILE`` and ``--log-json``.
Values come from the built-in defaults, then the config file, then flags.
Config files are JSON objects or ``key=value`` lines; dotted keys such as
``train.epochs`` address nested sections.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError, NumericalAbort

log = logging.getLogger("kspace_triage")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERICAL = 0, 2, 3, 4
THREADS_ENV = "KSPACE_TRIAGE_THREADS"


# ---------------------------------------------------------------- logging


class JsonFormatter(logging.Formatter):
    """One JSON object per record; extra ``fields`` are merged in."""

    def format(self, record):
        payload = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        payload.update(getattr(record, "fields", {}) or {})
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


class PlainFormatter(logging.Formatter):
    """Human-readable line with ``key=value`` fields appended."""

    def format(self, record):
        line = super().format(record)
        fields = getattr(record, "fields", None)
        if fields:
            line += " " + " ".join(f"{k}={v}" for k, v in sorted(fields.items()))
        return line


def setup_logging(json_lines=False, level="INFO", stream=None):
    handler = logging.StreamHandler(stream or sys.stderr)
    if json_lines:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(PlainFormatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("kspace_triage")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def event(message, **fields):
    log.info(message, extra={"fields": fields})


# ---------------------------------------------------------------- config files


def _parse_scalar(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_scalar(t) for t in text.split(",") if t.strip()]
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _set_dotted(target, key, value):
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f"config key {key!r} conflicts with a scalar value")
    target[parts[-1]] = value


def load_config_file(path):
    """Read a JSON object or ``key=value`` lines into a (possibly nested) dict."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return payload
    payload = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config {path} line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        _set_dotted(payload, key.strip().replace("-", "_"), _parse_scalar(value))
    return payload


def merge(base, overrides):
    """Recursive dict merge; ``None`` overrides are ignored."""
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def _flags(args, names, rename=None):
    rename = rename or {}
    return {rename.get(n, n): getattr(args, n, None) for n in names}


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def apply_thread_limit(env=None):
    """Validate ``KSPACE_TRIAGE_THREADS`` and cap BLAS/OpenMP pools.

    The package also exports the cap at import time; this call rejects bad
    values with a configuration error.
    """
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------- train config plumbing

TRAIN_FLAGS = ("rate", "epochs", "batch_size", "lr", "optimizer", "patience", "prior", "prior_sigma",
               "pos_weight", "per_record_masks")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--rate", type=float, help="sampling rate in (0, 1]")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--optimizer", choices=("adam", "sgd"))
    g.add_argument("--patience", type=int)
    g.add_argument("--prior", choices=("uniform", "center_weighted"))
    g.add_argument("--prior-sigma", type=float)
    g.add_argument("--pos-weight", type=float)
    g.add_argument("--per-record-masks", action="store_true", default=None,
                   help="draw a mask per record instead of per minibatch")


# ---------------------------------------------------------------- commands


def cmd_phantom_gen(args, file_cfg):
    from .data import PhantomConfig, write_dataset

    counts = {"n_train": 2000, "n_val": 400, "n_test": 400}
    cfg = merge(counts, file_cfg)
    cfg = merge(cfg, _flags(args, ("size", "n_coils", "noise_std", "seed", "n_train", "n_val", "n_test", "out")))
    lesion_flags = _flags(args, ("band", "amplitude", "extent", "probability"))
    if any(v is not None for v in lesion_flags.values()):
        lesions = cfg.get("lesions") or [{}]
        cfg["lesions"] = [merge(l, lesion_flags) for l in lesions]
    if not cfg.get("out"):
        raise ConfigError("phantom-gen needs --out")
    phantom = PhantomConfig.from_dict(cfg)
    n = [int(cfg[k]) for k in ("n_train", "n_val", "n_test")]
    if min(n) < 1:
        raise ConfigError(f"split sizes must be >= 1, got {n}")
    t0 = time.perf_counter()
    out = write_dataset(cfg["out"], phantom, *n)
    event("dataset written", path=str(out), records=sum(n), seconds=round(time.perf_counter() - t0, 2))
    return EXIT_OK


def _train_config(args, file_cfg):
    from .training import TrainConfig

    base = file_cfg.get("train", file_cfg)
    merged = merge(base, _flags(args, TRAIN_FLAGS + ("seed", "mode"), {"mode": "mask_mode"}))
    return TrainConfig.from_dict(merged)


def cmd_train(args, file_cfg):
    from .data import read_dataset
    from .report import training_curves
    from .sampling import read_mask
    from .training import train

    data = args.data or file_cfg.get("data")
    out = args.out or file_cfg.get("out")
    if not data or not out:
        raise ConfigError("train needs --data and --out")
    cfg = _train_config(args, file_cfg)
    mask_path = args.mask or file_cfg.get("mask")
    mask = read_mask(mask_path) if mask_path else None
    if cfg.mask_mode == "fixed" and mask is None:
        raise ConfigError("fixed mode needs --mask")
    splits = read_dataset(data, ("train", "val"))
    out = Path(out)
    event("training", mode=cfg.mask_mode, rate=cfg.rate, seed=cfg.seed, records=len(splits["train"]))
    model, report = train(splits["train"], splits["val"], cfg, mask=mask, checkpoint_dir=out / "checkpoint")
    _write_json(out / "train_report.json", report.to_dict())
    if not args.no_figures:
        training_curves(report, out / "training_curves.png")
    event("trained", best_epoch=report.best_epoch, best_val_auroc=report.best_val_auroc, out=str(out))
    return EXIT_OK


def cmd_search_mask(args, file_cfg):
    from .data import read_dataset
    from .masksearch import DEFAULT_CANDIDATES, search_mask
    from .model import load_checkpoint
    from .report import mask_figure
    from .sampling import MaskPrior

    cfg = merge({"n_candidates": DEFAULT_CANDIDATES, "prior": "uniform", "exhaustive": "never", "seed": 0},
                file_cfg)
    cfg = merge(cfg, _flags(args, ("checkpoint", "data", "out", "rate", "n_candidates", "prior", "prior_sigma",
                                   "exhaustive", "seed")))
    for key in ("checkpoint", "data", "out", "rate"):
        if cfg.get(key) is None:
            raise ConfigError(f"search-mask needs --{key.replace('_', '-')}")
    model = load_checkpoint(cfg["checkpoint"])
    val = read_dataset(cfg["data"], ("val",))["val"]
    rows, cols = val.shape
    prior = MaskPrior.from_rate(rows, cols, float(cfg["rate"]), cfg["prior"], cfg.get("prior_sigma"))
    rng = np.random.default_rng(int(cfg["seed"]))
    result = search_mask(model, val, float(cfg["rate"]), int(cfg["n_candidates"]), prior, rng,
                         exhaustive=cfg["exhaustive"])
    out = Path(cfg["out"])
    result.write(out)
    if not args.no_figures:
        mask_figure([result.mask], out / "mask.png", [f"score {result.best.score:.4f}"])
    event("mask selected", sampled_lines=list(result.mask.sampled_lines), score=result.best.score,
          candidates=len(result.candidates), exhaustive=result.exhaustive)
    return EXIT_OK


def cmd_eval(args, file_cfg):
    from .data import read_dataset
    from .evaluation import metric_report
    from .model import load_checkpoint
    from .report import roc_curve
    from .sampling import apply_mask, read_mask

    cfg = merge({"target_sensitivity": 0.85, "split": "test"}, file_cfg)
    cfg = merge(cfg, _flags(args, ("checkpoint", "data", "out", "mask", "target_sensitivity", "split", "seed")))
    for key in ("checkpoint", "data", "out"):
        if not cfg.get(key):
            raise ConfigError(f"eval needs --{key}")
    model = load_checkpoint(cfg["checkpoint"])
    splits = read_dataset(cfg["data"], ("val", cfg["split"]))
    mask = read_mask(cfg["mask"]) if cfg.get("mask") else None
    if model.config.mode == "image" and mask is not None:
        raise ConfigError("image-mode models take full-data images; drop --mask")

    def prepare(ds):
        if model.config.mode == "image":
            return ds.images
        return ds.kspace if mask is None else apply_mask(ds.kspace, mask)

    val, test = splits["val"], splits[cfg["split"]]
    val_probs, test_probs = model.predict_proba(prepare(val)), model.predict_proba(prepare(test))
    metrics = metric_report(val_probs, val.labels, test_probs, test.labels, val.pathologies,
                            float(cfg["target_sensitivity"]))
    out = Path(cfg["out"])
    _write_json(out / "metrics.json", {"split": cfg["split"], "mask": None if mask is None else mask.to_dict(),
                                        "target_sensitivity": float(cfg["target_sensitivity"]),
                                        "metrics": metrics})
    if not args.no_figures:
        for i, name in enumerate(test.pathologies):
            roc_curve(test_probs[:, i], test.labels[:, i], out / f"roc_{name}.png", name)
    for name, m in metrics.items():
        event("metrics", pathology=name, auroc=m["auroc"], sens=m["sensitivity"], spec=m["specificity"])
    return EXIT_OK


def cmd_sweep(args, file_cfg):
    from .sweep import SweepConfig, run_sweep

    cfg = merge(file_cfg, _flags(args, ("data", "out", "rates", "kinds", "seeds", "n_candidates",
                                        "target_sensitivity")))
    if args.seed is not None and args.seeds is None:
        cfg["seeds"] = [args.seed]
    if args.no_figures:
        cfg["figures"] = False
    train_flags = _flags(args, TRAIN_FLAGS)
    train_flags.pop("rate")
    cfg["train"] = merge(cfg.get("train", {}), train_flags)
    sweep_cfg = SweepConfig.from_dict(cfg)
    if not sweep_cfg.data:
        raise ConfigError("sweep needs --data")
    event("sweep", rates=list(sweep_cfg.rates), kinds=list(sweep_cfg.kinds), seeds=list(sweep_cfg.seeds))
    rows = run_sweep(sweep_cfg)
    event("sweep finished", rows=len(rows), out=sweep_cfg.out)
    return EXIT_OK


COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "train": cmd_train,
    "search-mask": cmd_search_mask,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--config", help="JSON or key=value config file; flags take precedence")
    common.add_argument("--log-json", action="store_true", help="one JSON object per log event")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    common.add_argument("--no-figures", action="store_true", help="skip matplotlib output")

    parser = argparse.ArgumentParser(prog="kspace-triage", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phantom-gen", parents=[common], help="write a synthetic phantom dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--size", type=int)
    p.add_argument("--n-coils", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--band", choices=("low", "mid", "high"), help="band of every lesion")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--extent", type=float)
    p.add_argument("--probability", type=float)

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--mode", choices=("random", "fixed", "full", "image"))
    p.add_argument("--mask", help="mask file for fixed mode")
    _add_train_flags(p)

    p = sub.add_parser("search-mask", parents=[common], help="search a sampling mask")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--rate", type=float)
    p.add_argument("--n-candidates", type=int)
    p.add_argument("--prior", choices=("uniform", "center_weighted"))
    p.add_argument("--prior-sigma", type=float)
    p.add_argument("--exhaustive", choices=("never", "always", "auto"))

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--mask", help="mask file; omit for full k-space or image models")
    p.add_argument("--split", choices=("val", "test"))
    p.add_argument("--target-sensitivity", type=float)

    p = sub.add_parser("sweep", parents=[common], help="run the rate x kind x seed grid")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--rates", type=_float_list, help="comma-separated, e.g. 0.05,0.08")
    p.add_argument("--kinds", type=_str_list, help="comma-separated model kinds")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    p.add_argument("--n-candidates", type=int)
    p.add_argument("--target-sensitivity", type=float)
    _add_train_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_json, args.log_level)
    try:
        apply_thread_limit()
        file_cfg = load_config_file(args.config)
        return COMMANDS[args.command](args, file_cfg)
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc, extra={"fields": dict(exc.diagnostics)})
        return EXIT_NUMERICAL
    except FormatError as exc:
        log.error("data format error: %s", exc)
        return EXIT_FORMAT
    except (ConfigError, ContractError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
