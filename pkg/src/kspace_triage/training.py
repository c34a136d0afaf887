"""Training loops.

``train_qval`` draws one sampling mask per minibatch from a data-independent
prior and applies it to every record in the batch before the gradient step.
``train_fixed_mask`` uses one mask throughout; ``train_image_classifier``
trains the image-input model on full-data RSS images.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericalAbort, UndefinedMetricError
from .evaluation import auroc, binary_cross_entropy
from .model import Model, ModelConfig, init_model, save_checkpoint
from .sampling import MaskPrior, SamplingMask, apply_mask, draw_mask

log = logging.getLogger(__name__)

MASK_MODES = ("random", "fixed", "full", "image")


@dataclass
class TrainConfig:
    rate: float = 1.0
    mask_mode: str = "random"
    prior: str = "uniform"
    prior_sigma: float | None = None
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    patience: int = 10
    seed: int = 0
    pos_weight: float | None = None
    per_record_masks: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 < self.rate <= 1:
            raise ConfigError(f"rate must be in (0, 1], got {self.rate}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_auroc: dict


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_auroc: float | None = None
    mask_draws: list = field(default_factory=list)
    checkpoint: str | None = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr, self.beta1, self.beta2, self.eps = params, lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.value = (p.value - update).astype(p.dtype, copy=False)


class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def step(self, grads):
        for p in self.params.values():
            g = grads.get(p)
            if g is not None:
                p.value = (p.value - self.lr * g).astype(p.dtype, copy=False)


def make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(model.params, cfg.lr)
    return Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def grad_norm(grads):
    return math.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2)) for g in grads.values()))


def _streams(seed):
    init, shuffle, masks, val_masks = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(s) for s in (init, shuffle, masks, val_masks))


class Trainer:
    """Owns model, optimizer and mask streams for one training run."""

    def __init__(self, cfg: TrainConfig, shape, pathologies, mask: SamplingMask | None = None, model=None):
        self.cfg = cfg
        rows, cols = shape
        self.mask = mask
        if cfg.mask_mode == "fixed" and mask is None:
            raise ConfigError("fixed mask mode needs a mask")
        if mask is not None and (mask.rows, mask.cols) != (rows, cols):
            raise ConfigError(f"mask {mask.rows}x{mask.cols} does not match data {rows}x{cols}")
        mode = "image" if cfg.mask_mode == "image" else "kspace"
        model_cfg = ModelConfig.from_dict({**asdict(cfg.model), "mode": mode, "pathologies": pathologies})
        init_rng, self.shuffle_rng, self.mask_rng, self.val_mask_rng = _streams(cfg.seed)
        self.model = model if model is not None else init_model(model_cfg, init_rng)
        self.optimizer = make_optimizer(self.model, cfg)
        self.prior = None
        if cfg.mask_mode == "random":
            self.prior = MaskPrior.from_rate(rows, cols, cfg.rate, cfg.prior, cfg.prior_sigma)
        self.draws = 0

    # inputs -------------------------------------------------------------

    def inputs(self, dataset, idx, rng=None):
        """Model inputs for records ``idx``; random mode draws masks from ``rng``."""
        mode = self.cfg.mask_mode
        if mode == "image":
            return dataset.images[idx]
        x = dataset.kspace[idx]
        if mode == "full":
            return x
        if mode == "fixed":
            return apply_mask(x, self.mask)
        rng = self.mask_rng if rng is None else rng
        if self.cfg.per_record_masks:
            self.draws += len(idx)
            return np.stack([apply_mask(xi, draw_mask(self.prior, rng)) for xi in x])
        self.draws += 1
        return apply_mask(x, draw_mask(self.prior, rng))

    # steps --------------------------------------------------------------

    def loss(self, x, y):
        return ad.sigmoid_bce(self.model.logits(x), y, self.cfg.pos_weight)

    def step(self, x, y, epoch=0, batch=0):
        # a diverging run is reported through NumericalAbort, not warnings
        with np.errstate(over="ignore", invalid="ignore"):
            loss = self.loss(x, y)
            grads = ad.backward(loss)
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericalAbort("non-finite training loss", epoch=epoch, batch=batch,
                                 grad_norm=grad_norm(grads))
        self.optimizer.step(grads)
        return value, grads

    def predict(self, dataset, masks_rng=None):
        """Probabilities on ``dataset`` using the trainer's masking rule."""
        bs = max(self.cfg.batch_size, 64)
        out = []
        for start in range(0, len(dataset), bs):
            idx = np.arange(start, min(start + bs, len(dataset)))
            x = self.inputs(dataset, idx, masks_rng)
            out.append(self.model.predict_proba(x, batch_size=bs))
        return np.concatenate(out, axis=0)

    def validate(self, dataset):
        # validation masks repeat every epoch so scores are comparable
        rng = None
        if self.cfg.mask_mode == "random":
            rng = np.random.default_rng(self.val_mask_rng.bit_generator.seed_seq)
        saved = self.draws
        probs = self.predict(dataset, rng)
        self.draws = saved
        loss = binary_cross_entropy(probs, dataset.labels)
        aucs = {}
        for i, name in enumerate(dataset.pathologies):
            try:
                aucs[name] = auroc(probs[:, i], dataset.labels[:, i])
            except UndefinedMetricError:
                aucs[name] = None
        return loss, aucs

    def fit(self, train_set, val_set, checkpoint_dir=None):
        cfg = self.cfg
        if len(train_set) == 0 or len(val_set) == 0:
            raise ConfigError("training and validation sets must be nonempty")
        report = TrainReport()
        best_state, best_score, stale = self.model.state(), -math.inf, 0
        for epoch in range(cfg.epochs):
            order = self.shuffle_rng.permutation(len(train_set))
            self.draws = 0
            losses, sizes = [], []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = np.sort(order[start:start + cfg.batch_size])
                x = self.inputs(train_set, idx)
                value, _ = self.step(x, train_set.labels[idx], epoch, b)
                losses.append(value)
                sizes.append(len(idx))
            train_loss = float(np.average(losses, weights=sizes))
            val_loss, aucs = self.validate(val_set)
            report.epochs.append(EpochStats(epoch, train_loss, val_loss, aucs))
            report.mask_draws.append(self.draws)
            defined = [v for v in aucs.values() if v is not None]
            score = float(np.mean(defined)) if defined else -val_loss
            log.info("epoch %d train_loss %.4f val_loss %.4f val_auroc %s", epoch, train_loss, val_loss, aucs)
            if score > best_score:
                best_score, best_state, stale = score, self.model.state(), 0
                report.best_epoch = epoch
                report.best_val_auroc = float(np.mean(defined)) if defined else None
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        self.model.load_state(best_state)
        if checkpoint_dir is not None:
            save_checkpoint(self.model, checkpoint_dir, extra={"train": cfg.to_dict()})
            report.checkpoint = str(checkpoint_dir)
        return self.model, report


def _with_mode(cfg, mode):
    return TrainConfig.from_dict({**cfg.to_dict(), "mask_mode": mode})


def train(train_set, val_set, cfg: TrainConfig, mask=None, checkpoint_dir=None):
    trainer = Trainer(cfg, train_set.shape, train_set.pathologies, mask)
    return trainer.fit(train_set, val_set, checkpoint_dir)


def train_qval(train_set, val_set, cfg: TrainConfig, checkpoint_dir=None):
    """Random-mask training of the conditional likelihood model (one mask per batch)."""
    return train(train_set, val_set, _with_mode(cfg, "random"), checkpoint_dir=checkpoint_dir)


def train_fixed_mask(train_set, val_set, mask: SamplingMask, cfg: TrainConfig, checkpoint_dir=None):
    return train(train_set, val_set, _with_mode(cfg, "fixed"), mask=mask, checkpoint_dir=checkpoint_dir)


def train_full(train_set, val_set, cfg: TrainConfig, checkpoint_dir=None):
    """kspace-net on fully sampled k-space."""
    return train(train_set, val_set, _with_mode(cfg, "full"), checkpoint_dir=checkpoint_dir)


def train_image_classifier(train_set, val_set, cfg: TrainConfig, checkpoint_dir=None):
    """Image-input model on full-data RSS magnitude images."""
    return train(train_set, val_set, _with_mode(cfg, "image"), checkpoint_dir=checkpoint_dir)
