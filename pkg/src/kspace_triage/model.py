"""kspace-net and its image-input sibling.

kspace mode:  masked k-space -> k-space layer (p complex kernels applied by the
convolution theorem) -> 2p real channels -> pre-activation residual backbone
-> one logit per pathology.

image mode:   magnitude image (1 channel) -> same backbone and heads.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, FormatError, ShapeError
from .kten import load_tensor, save_tensor
from .spectral import center_shift

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    mode: str = "kspace"
    pathologies: tuple[str, ...] = ("lesion",)
    n_kernels: int = 8
    kernel_size: int = 5
    widths: tuple[int, ...] = (16, 32, 64)
    stem_kernel: int = 4
    stem_stride: int = 4
    groups: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        self.pathologies = tuple(self.pathologies)
        self.widths = tuple(int(w) for w in self.widths)
        if self.mode not in ("kspace", "image"):
            raise ConfigError(f"mode must be 'kspace' or 'image', got {self.mode!r}")
        if not self.pathologies:
            raise ConfigError("at least one pathology head is required")
        if self.n_kernels < 1:
            raise ConfigError(f"n_kernels must be >= 1, got {self.n_kernels}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"bad backbone widths {self.widths}")
        if any(w % self.groups for w in self.widths):
            raise ConfigError(f"widths {self.widths} not divisible by groups={self.groups}")
        if self.stem_kernel < 1 or self.stem_stride < 1:
            raise ConfigError("stem kernel and stride must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def in_channels(self):
        return 2 * self.n_kernels if self.mode == "kspace" else 1

    @classmethod
    def from_dict(cls, payload):
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ---------------------------------------------------------------- k-space layer


def kspace_layer(x_s, kernels):
    """Convolve the image behind ``x_s`` with each kernel via the convolution theorem.

    ``x_s``: DC-centered complex k-space, (rows, cols) or (batch, rows, cols).
    ``kernels``: paired-real tensor (p, k, k, 2).

    Each kernel is zero-padded right and bottom to rows x cols and transformed;
    its spectrum multiplies the (un-centered) k-space and the product is
    transformed back. The kernel spectrum carries a sqrt(rows*cols) factor so
    the result equals the circular convolution of F^-1(x) with the kernel.
    Returns a tensor of shape (batch, p, rows, cols, 2).
    """
    x = np.asarray(x_s)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    rows, cols = x.shape[-2:]
    p, k = kernels.shape[0], kernels.shape[1]
    if k > rows or k > cols:
        raise ShapeError(f"kernel {k}x{k} larger than input {rows}x{cols}")
    real = kernels.dtype
    ctype = np.complex64 if real == np.float32 else np.complex128
    unshifted = center_shift(x.astype(ctype, copy=False), inverse=True)
    xr = np.empty(unshifted.shape + (2,), dtype=real)
    xr[..., 0] = unshifted.real
    xr[..., 1] = unshifted.imag
    padded = ad.zero_pad(kernels, ((0, 0), (0, rows - k), (0, cols - k), (0, 0)))
    spectrum = ad.mul(ad.dft2(padded), real.type(np.sqrt(rows * cols)))
    product = ad.complex_mul(ad.constant(xr[:, None]), spectrum)
    h = ad.dft2(product, inverse=True)
    return ad.reshape(h, (p, rows, cols, 2)) if squeeze else h


def kspace_features(x_s, kernels):
    """k-space layer output as backbone channels (batch, 2p, rows, cols).

    Channel 2j holds Re(h_j) and channel 2j+1 holds Im(h_j). Same values as
    :func:`kspace_layer`, computed by the fused op; when the batch is
    under-sampled only the sampled columns are transformed.
    """
    x = np.asarray(x_s)
    x = center_shift(x.reshape((-1,) + x.shape[-2:]), inverse=True)
    k = kernels.shape[1]
    if k > x.shape[-2] or k > x.shape[-1]:
        raise ShapeError(f"kernel {k}x{k} larger than input {x.shape[-2]}x{x.shape[-1]}")
    active = np.flatnonzero(np.any(x != 0, axis=(0, 1)))
    columns = active if len(active) <= x.shape[-1] // 2 else None
    return ad.spectral_conv(x, kernels, columns)


# ---------------------------------------------------------------- model


class Model:
    """Parameters plus the forward pass. ``params`` is an ordered name -> Tensor dict."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    @property
    def pathologies(self):
        return self.config.pathologies

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def _p(self, name):
        return self.params[name]

    def _prepare(self, inputs):
        inputs = np.asarray(inputs)
        if self.config.mode == "kspace":
            if not np.iscomplexobj(inputs):
                raise ContractError("kspace-mode model needs complex k-space input")
            return inputs.reshape((-1,) + inputs.shape[-2:])
        if np.iscomplexobj(inputs):
            raise ContractError("image-mode model needs a real magnitude image")
        inputs = inputs.reshape((-1,) + inputs.shape[-2:]).astype(self.dtype, copy=False)
        return inputs[:, None]

    def _block(self, x, prefix, stride):
        g = self.config.groups
        pre = ad.relu(ad.group_norm(x, self._p(f"{prefix}.gn1.gamma"), self._p(f"{prefix}.gn1.beta"), g))
        out = ad.conv2d(pre, self._p(f"{prefix}.conv1"), stride=stride, padding=1)
        out = ad.relu(ad.group_norm(out, self._p(f"{prefix}.gn2.gamma"), self._p(f"{prefix}.gn2.beta"), g))
        out = ad.conv2d(out, self._p(f"{prefix}.conv2"), padding=1)
        shortcut_name = f"{prefix}.shortcut"
        if shortcut_name in self.params:
            shortcut = ad.conv2d(pre, self._p(shortcut_name), stride=stride)
        else:
            shortcut = x
        return ad.add(out, shortcut)

    def features(self, inputs):
        """Backbone feature vector per input, (batch, widths[-1])."""
        cfg = self.config
        x = self._prepare(inputs)
        if cfg.mode == "kspace":
            x = kspace_features(x, self._p("kspace.kernels"))
        else:
            x = ad.constant(x)
        x = ad.conv2d(x, self._p("stem"), stride=cfg.stem_stride)
        for i in range(len(cfg.widths)):
            x = self._block(x, f"stage{i}", 1 if i == 0 else 2)
        x = ad.relu(ad.group_norm(x, self._p("final_gn.gamma"), self._p("final_gn.beta"), cfg.groups))
        return ad.global_avg_pool(x)

    def logits(self, inputs):
        """Graph-recording forward pass; (batch, n_pathologies) logits."""
        z = self.features(inputs)
        heads = [ad.dense(z, self._p(f"head.{name}.weight"), self._p(f"head.{name}.bias"))
                 for name in self.pathologies]
        return heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)

    def predict_proba(self, inputs, batch_size=64):
        """P(y=1 | input) per pathology as float64, (batch, n_pathologies)."""
        inputs = self._prepare_batchable(inputs)
        out = []
        with ad.no_grad():
            for start in range(0, len(inputs), batch_size):
                z = self.logits(inputs[start:start + batch_size]).value.astype(np.float64)
                out.append(1.0 / (1.0 + np.exp(-z)))
        return np.concatenate(out, axis=0)

    def _prepare_batchable(self, inputs):
        inputs = np.asarray(inputs)
        return inputs.reshape((-1,) + inputs.shape[-2:])

    def state(self):
        return {name: t.value.copy() for name, t in self.params.items()}

    def load_state(self, state):
        for name, value in state.items():
            self.params[name].value = np.array(value, dtype=self.params[name].dtype)

    def copy(self):
        params = {name: ad.parameter(t.value.copy(), name) for name, t in self.params.items()}
        return Model(self.config, params)


def forward(model: Model, inputs, batch_size=64):
    """Per-pathology probabilities for one input or a batch."""
    return model.predict_proba(inputs, batch_size=batch_size)


def init_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    """Seeded parameter initialization.

    Kernel real and imaginary parts are N(0, 1/(k^2 p)); convolution weights
    use He scaling on fan-in; heads use 1/fan-in variance and zero bias.
    """
    dtype = np.dtype(config.dtype)
    params = {}

    def add(name, value):
        params[name] = ad.parameter(np.asarray(value, dtype=dtype), name)

    def conv(name, out_ch, in_ch, size):
        fan_in = in_ch * size * size
        add(name, rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, size, size)))

    def gn(name, ch):
        add(f"{name}.gamma", np.ones(ch))
        add(f"{name}.beta", np.zeros(ch))

    if config.mode == "kspace":
        p, k = config.n_kernels, config.kernel_size
        add("kspace.kernels", rng.normal(0.0, np.sqrt(1.0 / (k * k * p)), (p, k, k, 2)))
    conv("stem", config.widths[0], config.in_channels, config.stem_kernel)
    in_w = config.widths[0]
    for i, w in enumerate(config.widths):
        prefix = f"stage{i}"
        gn(f"{prefix}.gn1", in_w)
        conv(f"{prefix}.conv1", w, in_w, 3)
        gn(f"{prefix}.gn2", w)
        conv(f"{prefix}.conv2", w, w, 3)
        if in_w != w or i > 0:
            conv(f"{prefix}.shortcut", w, in_w, 1)
        in_w = w
    gn("final_gn", in_w)
    for name in config.pathologies:
        add(f"head.{name}.weight", rng.normal(0.0, np.sqrt(1.0 / in_w), (in_w, 1)))
        add(f"head.{name}.bias", np.zeros(1))
    return Model(config, params)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: Model, directory, extra=None):
    """Write ``manifest`` plus one KTEN file per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "mode": model.config.mode,
        "pathologies": list(model.pathologies),
        "config": asdict(model.config),
        "parameters": list(model.params),
    }
    if extra:
        manifest["extra"] = extra
    for name, tensor in model.params.items():
        save_tensor(directory / f"{name}.kten", tensor.value)
    (directory / "manifest").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"no manifest in {directory}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad manifest in {directory}: {exc}", exc.pos) from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')}")
    config = ModelConfig.from_dict(manifest["config"])
    template = init_model(config, np.random.default_rng(0))
    for name in manifest["parameters"]:
        if name not in template.params:
            raise FormatError(f"checkpoint parameter {name!r} not in model")
        value = load_tensor(directory / f"{name}.kten")
        if value.shape != template.params[name].shape:
            raise FormatError(f"parameter {name!r} has shape {value.shape}, "
                              f"expected {template.params[name].shape}")
        template.params[name].value = value.astype(config.dtype)
    return template
