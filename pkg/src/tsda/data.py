"""Time-series domains: containers, segmentation, splitting, normalization,
on-disk format and a synthetic shifted-domain generator."""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    LabelRangeError,
    LoadError,
    MissingFileError,
    SegmentationError,
    ShapeMismatchError,
    SplitError,
)

SAMPLES_MAGIC = b"TSDA1"
NORM_EPS = 1e-8


class LabelAudit:
    """Counts label reads on guarded datasets, keyed by (tag, phase).

    The active phase is set with :meth:`phase`; reads outside any phase are
    attributed to ``"idle"``.
    """

    def __init__(self):
        self.counts: Counter = Counter()
        self._phase = "idle"

    @contextmanager
    def phase(self, name: str):
        previous, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = previous

    def record(self, tag: str) -> None:
        self.counts[(tag, self._phase)] += 1

    def reads(self, tag: str | None = None, phases=None) -> int:
        return sum(
            n
            for (t, p), n in self.counts.items()
            if (tag is None or t == tag) and (phases is None or p in phases)
        )


class TimeSeriesDataset:
    """Labelled multichannel windows ``(N, C, T)`` for one domain split."""

    def __init__(self, samples, labels, num_classes: int, name: str = "", split: str = "train"):
        samples = np.ascontiguousarray(samples, dtype=np.float32)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if samples.ndim != 3:
            raise ArgumentError(f"samples must be (N, C, T), got shape {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise ArgumentError(
                f"labels length {labels.shape} does not match N={samples.shape[0]}"
            )
        if num_classes < 2:
            raise ArgumentError("num_classes must be >= 2")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ArgumentError(f"labels must lie in [0, {num_classes})")
        if split not in ("train", "test"):
            raise ArgumentError(f"split must be 'train' or 'test', got {split!r}")
        samples.setflags(write=False)
        labels.setflags(write=False)
        self.samples = samples
        self._labels = labels
        self.num_classes = int(num_classes)
        self.name = name
        self.split = split
        self._audit: LabelAudit | None = None
        self._tag = ""

    @property
    def labels(self) -> np.ndarray:
        if self._audit is not None:
            self._audit.record(self._tag)
        return self._labels

    @property
    def shape(self) -> tuple[int, int]:
        """(C, T) shared by every sample."""
        return self.samples.shape[1], self.samples.shape[2]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __repr__(self) -> str:
        n, c, t = self.samples.shape
        return f"TimeSeriesDataset({self.name!r}, split={self.split}, N={n}, C={c}, T={t}, K={self.num_classes})"

    def subset(self, index, split: str | None = None) -> "TimeSeriesDataset":
        index = np.asarray(index, dtype=np.int64)
        return TimeSeriesDataset(
            self.samples[index], self._labels[index], self.num_classes,
            name=self.name, split=split or self.split,
        )

    def with_samples(self, samples) -> "TimeSeriesDataset":
        return TimeSeriesDataset(samples, self._labels, self.num_classes, self.name, self.split)

    def guarded(self, audit: LabelAudit, tag: str) -> "TimeSeriesDataset":
        """Copy whose label reads are counted by ``audit`` under ``tag``."""
        ds = TimeSeriesDataset(self.samples, self._labels, self.num_classes, self.name, self.split)
        ds._audit, ds._tag = audit, tag
        return ds

    def unlabeled(self) -> "UnlabeledView":
        return UnlabeledView(self.samples, self.num_classes, self.name, self.split)


@dataclass(frozen=True)
class UnlabeledView:
    """Samples of a domain with no route to its labels."""

    samples: np.ndarray
    num_classes: int
    name: str = ""
    split: str = "train"

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape[1], self.samples.shape[2]


@dataclass(frozen=True)
class Scenario:
    dataset_name: str
    source_domain: str
    target_domain: str

    def __post_init__(self):
        if str(self.source_domain) == str(self.target_domain):
            raise ArgumentError("source and target domains must differ")

    @classmethod
    def parse(cls, text: str, dataset_name: str = "") -> "Scenario":
        try:
            src, tgt = text.split(":")
        except ValueError:
            raise ArgumentError(f"scenario must look like 'src:tgt', got {text!r}") from None
        return cls(dataset_name, src.strip(), tgt.strip())

    @property
    def key(self) -> str:
        return f"{self.source_domain}->{self.target_domain}"


def segment(signal, window: int, stride: int) -> np.ndarray:
    """Cut a ``(C, T_raw)`` signal into ``(N, C, window)`` sliding windows.

    Window ``i`` covers timesteps ``[i*stride, i*stride + window)``.
    """
    signal = np.asarray(signal)
    if signal.ndim != 2:
        raise ArgumentError(f"signal must be (C, T_raw), got shape {signal.shape}")
    if stride < 1:
        raise ArgumentError("stride must be positive")
    if window < 1:
        raise ArgumentError("window must be positive")
    t_raw = signal.shape[1]
    if window > t_raw:
        raise SegmentationError(f"window {window} longer than signal ({t_raw} steps)")
    n = (t_raw - window) // stride + 1
    starts = np.arange(n) * stride
    return np.stack([signal[:, s:s + window] for s in starts])


def split_counts(n_class: int, train_fraction: float = 0.7) -> int:
    """Train count for a class of ``n_class`` samples (round half up)."""
    n_train = int(math.floor(train_fraction * n_class + 0.5))
    return min(n_train, n_class - 1)


def stratified_split(ds: TimeSeriesDataset, train_fraction: float = 0.7, seed: int = 0):
    """Per-class shuffled split; every class keeps at least one test sample."""
    if not 0.0 < train_fraction < 1.0:
        raise ArgumentError("train_fraction must lie in (0, 1)")
    labels = ds._labels
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        if members.size < 2:
            raise SplitError(f"class {k} has a single sample; cannot cover the test set")
        members = rng.permutation(members)
        n_train = split_counts(members.size, train_fraction)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    if not train_idx:
        raise SplitError("cannot split an empty dataset")
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return ds.subset(train_idx, "train"), ds.subset(test_idx, "test")


def channel_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel population mean and std over samples and timesteps."""
    x = np.asarray(samples, dtype=np.float64)
    return x.mean(axis=(0, 2)), x.std(axis=(0, 2))


def normalize(train: TimeSeriesDataset, test: TimeSeriesDataset):
    """Z-score both splits channel-wise with the train split's statistics."""
    if train.shape != test.shape:
        raise ArgumentError(f"train {train.shape} and test {test.shape} shapes differ")
    mean, std = channel_stats(train.samples)
    scale = np.maximum(std, NORM_EPS)[None, :, None]
    mean = mean[None, :, None]

    def apply(ds):
        return ds.with_samples(((ds.samples.astype(np.float64) - mean) / scale).astype(np.float32))

    return apply(train), apply(test)


# --------------------------------------------------------------------------
# on-disk format


def write_samples(path: Path, samples: np.ndarray) -> None:
    n, c, t = samples.shape
    with open(path, "wb") as fh:
        fh.write(SAMPLES_MAGIC + struct.pack("<III", n, c, t))
        fh.write(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def read_samples(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing samples file {path}")
    raw = path.read_bytes()
    header = len(SAMPLES_MAGIC) + 12
    if raw[:len(SAMPLES_MAGIC)] != SAMPLES_MAGIC or len(raw) < header:
        raise LoadError(f"{path}: bad magic or truncated header")
    n, c, t = struct.unpack("<III", raw[len(SAMPLES_MAGIC):header])
    payload = raw[header:]
    if len(payload) != 4 * n * c * t:
        raise ShapeMismatchError(f"{path}: payload holds {len(payload)} bytes, header says {(n, c, t)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, c, t).astype(np.float32)


def write_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(labels)))
        fh.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())


def read_labels(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing labels file {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise LoadError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[:4])
    if len(raw) - 4 != 4 * n:
        raise ShapeMismatchError(f"{path}: payload does not hold {n} labels")
    return np.frombuffer(raw[4:], dtype="<i4").astype(np.int64)


def save_dataset(root, name: str, domains: dict, window_length: int | None = None) -> Path:
    """Write ``domains`` (id -> {"train", "test"}) under ``root/name``.

    Returns the manifest path.
    """
    base = Path(root) / name
    base.mkdir(parents=True, exist_ok=True)
    entries = {}
    channels = classes = None
    for dom_id, splits in domains.items():
        entry = {}
        for split in ("train", "test"):
            ds = splits[split]
            c, t = ds.shape
            if channels is None:
                channels, classes, window_length = c, ds.num_classes, window_length or t
            if (c, ds.num_classes) != (channels, classes):
                raise ArgumentError(f"domain {dom_id} disagrees on channels/classes")
            rel = Path(f"domain_{dom_id}") / split
            (base / rel).mkdir(parents=True, exist_ok=True)
            write_samples(base / rel / "samples.f32le", ds.samples)
            write_labels(base / rel / "labels.i32le", ds._labels)
            entry[split] = {
                "samples": str(rel / "samples.f32le"),
                "labels": str(rel / "labels.i32le"),
                "count": len(ds),
            }
        entries[str(dom_id)] = entry
    manifest = {
        "name": name,
        "num_domains": len(entries),
        "channels": channels,
        "classes": classes,
        "window_length": window_length,
        "domains": entries,
    }
    path = base / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(manifest_path) -> dict[str, dict[str, TimeSeriesDataset]]:
    """Load every domain listed in a manifest, validating shapes and labels."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{manifest_path}: invalid JSON ({exc})") from None
    base = manifest_path.parent
    domains = manifest.get("domains", {})
    channels = manifest.get("channels")
    classes = manifest.get("classes")
    length = manifest.get("window_length")
    out = {}
    for dom_id, entry in domains.items():
        out[dom_id] = {}
        for split in ("train", "test"):
            info = entry[split]
            x = read_samples(base / info["samples"])
            y = read_labels(base / info["labels"])
            if x.shape[0] != info["count"] or y.shape[0] != info["count"]:
                raise ShapeMismatchError(
                    f"domain {dom_id}/{split}: manifest count {info['count']} vs "
                    f"{x.shape[0]} samples, {y.shape[0]} labels"
                )
            if x.shape[1] != channels or x.shape[2] != length:
                raise ShapeMismatchError(
                    f"domain {dom_id}/{split}: shape {x.shape[1:]} vs manifest {(channels, length)}"
                )
            if y.size and (y.min() < 0 or y.max() >= classes):
                raise LabelRangeError(f"domain {dom_id}/{split}: labels outside [0, {classes})")
            out[dom_id][split] = TimeSeriesDataset(x, y, classes, name=f"{manifest.get('name', '')}/{dom_id}", split=split)
    return out


def prepare_scenario(domains: dict, scenario: Scenario) -> dict[str, TimeSeriesDataset]:
    """Normalized ``src_train, src_test, tgt_train, tgt_test`` for a scenario.

    Each domain is normalized with its own training statistics.
    """
    for d in (scenario.source_domain, scenario.target_domain):
        if d not in domains:
            raise ArgumentError(f"unknown domain {d!r}")
    src, tgt = domains[scenario.source_domain], domains[scenario.target_domain]
    if src["train"].shape[0] != tgt["train"].shape[0] or src["train"].num_classes != tgt["train"].num_classes:
        raise ArgumentError("source and target must share channels and classes")
    s_tr, s_te = normalize(src["train"], src["test"])
    t_tr, t_te = normalize(tgt["train"], tgt["test"])
    return {"src_train": s_tr, "src_test": s_te, "tgt_train": t_tr, "tgt_test": t_te}


# --------------------------------------------------------------------------
# synthetic shifted domains


@dataclass(frozen=True)
class DomainStyle:
    """Nuisance parameters of one synthetic domain.

    ``amplitude`` scales the class-bearing oscillation, ``offset`` adds a DC
    level, ``noise`` is the white-noise std.  ``interference`` is the
    amplitude of a class-independent tone at ``interference_frequency``
    cycles per window.  ``frequency_scale`` stretches every class frequency,
    as a sensor with a different sampling rate would.
    """

    amplitude: float = 1.0
    offset: float = 0.0
    noise: float = 0.3
    interference: float = 0.0
    interference_frequency: float = 0.0
    frequency_scale: float = 1.0


@dataclass(frozen=True)
class ShiftSpec:
    num_classes: int = 4
    channels: int = 3
    length: int = 128
    samples_per_class: int = 80
    class_frequencies: tuple = ()
    frequency_jitter: float = 0.04
    source: DomainStyle = field(default_factory=DomainStyle)
    target: DomainStyle = field(default_factory=DomainStyle)

    def frequencies(self) -> np.ndarray:
        if self.class_frequencies:
            return np.asarray(self.class_frequencies, dtype=np.float64)
        return np.linspace(3.0, 3.0 + 3.0 * (self.num_classes - 1), self.num_classes)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ArgumentError("synthetic spec needs at least 2 classes")
        if self.channels < 1 or self.length < 4 or self.samples_per_class < 2:
            raise ArgumentError("degenerate synthetic spec")
        freqs = self.frequencies()
        if freqs.shape != (self.num_classes,) or len(set(freqs.tolist())) != self.num_classes:
            raise ArgumentError("class_frequencies must give one distinct value per class")
        for style in (self.source, self.target):
            if style.noise < 0 or style.amplitude <= 0 or style.frequency_scale <= 0:
                raise ArgumentError("noise must be >= 0; amplitude and frequency_scale > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_frequencies"] = list(self.class_frequencies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftSpec":
        d = dict(d)
        for key in ("source", "target"):
            if key in d and isinstance(d[key], dict):
                d[key] = DomainStyle(**d[key])
        d["class_frequencies"] = tuple(d.get("class_frequencies", ()))
        return cls(**d)


def _draw_domain(spec: ShiftSpec, style: DomainStyle, rng: np.random.Generator):
    k, c, t, n = spec.num_classes, spec.channels, spec.length, spec.samples_per_class
    freqs = spec.frequencies()
    labels = np.repeat(np.arange(k), n)
    total = labels.size
    steps = np.arange(t) / t
    # per-sample frequency jitter and per-channel random phases
    f = style.frequency_scale * freqs[labels] * (1.0 + spec.frequency_jitter * rng.standard_normal(total))
    phase = rng.uniform(0, 2 * np.pi, size=(total, c))
    gain = rng.uniform(0.8, 1.2, size=(total, c))
    signal = gain[:, :, None] * np.sin(2 * np.pi * f[:, None, None] * steps[None, None, :] + phase[:, :, None])
    x = style.amplitude * signal + style.offset
    tone_phase = rng.uniform(0, 2 * np.pi, size=(total, c))
    x = x + style.interference * np.sin(
        2 * np.pi * style.interference_frequency * steps[None, None, :] + tone_phase[:, :, None]
    )
    x = x + style.noise * rng.standard_normal((total, c, t))
    return x.astype(np.float32), labels


def make_synthetic(spec: ShiftSpec, seed: int = 0, train_fraction: float = 0.7):
    """Draw a source/target pair sharing class semantics.

    Returns ``(source, target)``, each a dict with raw (unnormalized)
    ``"train"`` and ``"test"`` splits.
    """
    spec.validate()
    rng = np.random.default_rng([seed, 0x5EED])
    out = []
    for tag, style in (("source", spec.source), ("target", spec.target)):
        x, y = _draw_domain(spec, style, rng)
        full = TimeSeriesDataset(x, y, spec.num_classes, name=f"synthetic/{tag}")
        tr, te = stratified_split(full, train_fraction, seed=int(rng.integers(2**31)))
        out.append({"train": tr, "test": te})
    return out[0], out[1]
