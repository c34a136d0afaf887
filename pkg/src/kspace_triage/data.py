"""Synthetic multi-coil phantoms with planted, frequency-localized lesions.

Each record is a smooth random-ellipse anatomy plus, per pathology, an
optional lesion: a Gaussian-windowed cosine grating whose modulation runs
along the column axis. Its k-space energy therefore sits in a known band of
columns at a fixed distance from the center. The image is multiplied by smooth
complex coil sensitivities, transformed to DC-centered k-space and corrupted by
complex Gaussian noise.

On disk a dataset is a directory of ``.kten`` record files plus an ``index``
file (tab-separated ``filename split label_0 .. label_{P-1}``) and a
``phantom.json`` with the generating config.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .coils import esc_combine, rss_combine
from .errors import ConfigError, FormatError
from .kten import decode_tensor, encode_tensor
from .spectral import image_to_kspace

# band centre as a fraction of the Nyquist offset (cols // 2)
BAND_CENTER = {"low": 0.12, "mid": 0.4, "high": 0.72}
MIN_BAND_ENERGY = 0.6
SPLITS = ("train", "val", "test")


@dataclass
class LesionSpec:
    name: str = "lesion"
    probability: float = 0.5
    extent: float = 16.0  # envelope FWHM-like width in pixels (sigma = extent / 2)
    amplitude: float = 0.5
    band: str = "high"

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"lesion probability must be in [0, 1], got {self.probability}")
        if self.band not in BAND_CENTER:
            raise ConfigError(f"band must be one of {sorted(BAND_CENTER)}, got {self.band!r}")
        if self.extent <= 0:
            raise ConfigError(f"lesion extent must be positive, got {self.extent}")

    @property
    def sigma(self):
        return self.extent / 2.0


@dataclass
class PhantomConfig:
    size: int = 64
    n_coils: int = 4
    lesions: list = field(default_factory=lambda: [LesionSpec()])
    noise_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        self.lesions = [l if isinstance(l, LesionSpec) else LesionSpec(**l) for l in self.lesions]
        if self.size < 16:
            raise ConfigError(f"phantom size must be >= 16, got {self.size}")
        if self.n_coils < 1:
            raise ConfigError(f"n_coils must be >= 1, got {self.n_coils}")
        if not self.lesions:
            raise ConfigError("at least one pathology is required")
        if len({l.name for l in self.lesions}) != len(self.lesions):
            raise ConfigError("pathology names must be unique")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def pathologies(self):
        return tuple(l.name for l in self.lesions)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def band_offset(size, band):
    """Column offset from the center at which a lesion of this band peaks."""
    return int(round(BAND_CENTER[band] * (size // 2)))


def band_columns(size, lesion: LesionSpec):
    """Sorted DC-centered column indices belonging to the lesion's band.

    The band spans +-ceil(2 spectral sigmas) around the peak offset on both
    sides of the center (the lesion is real, so its spectrum is symmetric).
    """
    center = size // 2
    offset = band_offset(size, lesion.band)
    spread = size / (2 * math.pi * lesion.sigma)
    half = max(1, math.ceil(2 * spread))
    cols = set()
    for sign in (1, -1):
        for d in range(offset - half, offset + half + 1):
            c = center + sign * d
            if 0 <= c < size:
                cols.add(c)
    return np.array(sorted(cols))


@dataclass
class LabeledRecord:
    coils: np.ndarray  # (n_coils, r, c) complex64, DC-centered
    esc: np.ndarray  # (r, c) complex64, DC-centered
    rss: np.ndarray  # (r, c) float32
    labels: np.ndarray  # (n_pathologies,) uint8


# ---------------------------------------------------------------- generation


def _anatomy(size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = (yy - size / 2) / (size / 2)
    xx = (xx - size / 2) / (size / 2)
    image = np.zeros((size, size))

    def ellipse(cy, cx, ay, ax, angle, value):
        cos, sin = math.cos(angle), math.sin(angle)
        u = (xx - cx) * cos + (yy - cy) * sin
        v = -(xx - cx) * sin + (yy - cy) * cos
        image[(u / ax) ** 2 + (v / ay) ** 2 <= 1.0] += value

    ellipse(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
            rng.uniform(0.7, 0.85), rng.uniform(0.55, 0.75), rng.uniform(-0.3, 0.3), 1.0)
    for _ in range(rng.integers(3, 7)):
        ellipse(rng.uniform(-0.4, 0.4), rng.uniform(-0.35, 0.35), rng.uniform(0.08, 0.3),
                rng.uniform(0.08, 0.3), rng.uniform(0, math.pi), rng.uniform(-0.4, 0.4))
    # smooth edges keep anatomy energy out of the high-frequency columns
    return gaussian_filter(image, sigma=1.5 * size / 64)


def lesion_image(size, lesion: LesionSpec, rng):
    """One lesion realisation: random position, phase and amplitude jitter."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, size=2)
    envelope = np.exp(-0.5 * (((yy - cy) ** 2) + ((xx - cx) ** 2)) / lesion.sigma ** 2)
    freq = band_offset(size, lesion.band) / size
    phase = rng.uniform(0, 2 * math.pi)
    amp = lesion.amplitude * rng.uniform(0.8, 1.2)
    return amp * envelope * np.cos(2 * math.pi * freq * xx + phase)


def band_energy_fraction(image, columns):
    """Fraction of an image's spectral energy inside the given DC-centered columns."""
    spec = np.abs(image_to_kspace(image.astype(np.complex128))) ** 2
    total = spec.sum()
    return float(spec[:, columns].sum() / total) if total > 0 else 0.0


def _sensitivities(size, n_coils, rng):
    if n_coils == 1:
        return np.ones((1, size, size), dtype=np.complex128)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size - 0.5
    maps = []
    for j in range(n_coils):
        angle = 2 * math.pi * j / n_coils + rng.uniform(-0.2, 0.2)
        cy, cx = 0.6 * math.sin(angle), 0.6 * math.cos(angle)
        magnitude = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.45 ** 2))
        phase = rng.uniform(-math.pi, math.pi) + 2.0 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
        maps.append(magnitude * np.exp(1j * phase))
    maps = np.array(maps)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0)).max()


def generate_record(cfg: PhantomConfig, rng: np.random.Generator) -> LabeledRecord:
    size = cfg.size
    image = _anatomy(size, rng)
    labels = np.zeros(len(cfg.lesions), dtype=np.uint8)
    for i, lesion in enumerate(cfg.lesions):
        if rng.random() < lesion.probability:
            planted = lesion_image(size, lesion, rng)
            frac = band_energy_fraction(planted, band_columns(size, lesion))
            if frac < MIN_BAND_ENERGY:
                raise ConfigError(f"lesion {lesion.name!r} keeps only {frac:.2f} of its energy in band")
            image = image + planted
            labels[i] = 1
    sens = _sensitivities(size, cfg.n_coils, rng)
    coils = image_to_kspace(sens * image)
    if cfg.noise_std > 0:
        coils = coils + cfg.noise_std * (rng.standard_normal(coils.shape) + 1j * rng.standard_normal(coils.shape))
    coils = coils.astype(np.complex64)
    rss = rss_combine(coils).astype(np.float32)
    esc = esc_combine(coils).astype(np.complex64)
    return LabeledRecord(coils=coils, esc=esc, rss=rss, labels=labels)


@dataclass
class Dataset:
    """Training view of a split: ESC k-space, RSS images and labels as stacked arrays."""

    kspace: np.ndarray  # (n, r, c) complex64
    images: np.ndarray  # (n, r, c) float32
    labels: np.ndarray  # (n, P) uint8
    pathologies: tuple

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.kspace.shape[1:]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.kspace[idx], self.images[idx], self.labels[idx], self.pathologies)

    @classmethod
    def from_records(cls, records, pathologies):
        records = list(records)
        if not records:
            raise ConfigError("dataset needs at least one record")
        return cls(np.stack([r.esc for r in records]), np.stack([r.rss for r in records]),
                   np.stack([r.labels for r in records]), tuple(pathologies))


def record_seed(cfg: PhantomConfig, index):
    return cfg.seed + index


def generate_records(cfg: PhantomConfig, start, count):
    for i in range(start, start + count):
        yield generate_record(cfg, np.random.default_rng(record_seed(cfg, i)))


def generate_splits(cfg: PhantomConfig, n_train, n_val, n_test):
    """In-memory {split: Dataset}; records are numbered train, then val, then test."""
    out = {}
    start = 0
    for split, count in zip(SPLITS, (n_train, n_val, n_test)):
        out[split] = Dataset.from_records(generate_records(cfg, start, count), cfg.pathologies)
        start += count
    return out


# ---------------------------------------------------------------- serialization


def encode_record(record: LabeledRecord):
    return b"".join(encode_tensor(a) for a in
                    (record.coils, record.esc, record.rss, record.labels.astype(np.float32)))


def decode_record(buf):
    arrays = []
    offset = 0
    for _ in range(4):
        arr, offset = decode_tensor(buf, offset)
        arrays.append(arr)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after record", offset)
    coils, esc, rss, labels = arrays
    if coils.ndim != 3 or esc.shape != coils.shape[1:] or rss.shape != esc.shape:
        raise FormatError(f"inconsistent record shapes {coils.shape}, {esc.shape}, {rss.shape}")
    return LabeledRecord(coils=coils, esc=esc, rss=rss, labels=labels.astype(np.uint8))


def write_record(path, record: LabeledRecord):
    Path(path).write_bytes(encode_record(record))


def read_record(path) -> LabeledRecord:
    return decode_record(Path(path).read_bytes())


def write_dataset(directory, cfg: PhantomConfig, n_train, n_val, n_test):
    """Generate and write a dataset directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    start = 0
    for split, count in zip(SPLITS, (n_train, n_val, n_test)):
        for i, record in enumerate(generate_records(cfg, start, count), start=start):
            name = f"rec_{i:06d}.kten"
            write_record(directory / name, record)
            lines.append("\t".join([name, split] + [str(int(v)) for v in record.labels]))
        start += count
    (directory / "index").write_text("\n".join(lines) + "\n")
    (directory / "phantom.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return directory


def read_index(directory):
    directory = Path(directory)
    try:
        text = (directory / "index").read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"no index file in {directory}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3 or parts[1] not in SPLITS:
            raise FormatError(f"bad index line {lineno}: {line!r}")
        entries.append((parts[0], parts[1], [int(v) for v in parts[2:]]))
    return entries


def read_dataset(directory, splits=SPLITS):
    """Load a dataset directory into {split: Dataset}; missing splits raise ConfigError."""
    directory = Path(directory)
    meta_path = directory / "phantom.json"
    pathologies = None
    if meta_path.exists():
        pathologies = PhantomConfig.from_dict(json.loads(meta_path.read_text())).pathologies
    grouped = {s: [] for s in splits}
    for name, split, _ in read_index(directory):
        if split in grouped:
            grouped[split].append(read_record(directory / name))
    out = {}
    for split, records in grouped.items():
        if not records:
            raise ConfigError(f"dataset {directory} has no {split!r} records")
        names = pathologies or tuple(f"pathology_{i}" for i in range(len(records[0].labels)))
        out[split] = Dataset.from_records(records, names)
    return out
