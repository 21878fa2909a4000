"""Dataset loaders and anomaly-detection scenario assembly.

Supported inputs:

* IDX image/label pairs (MNIST, Fashion-MNIST); pixels scaled by 1/255.
* ECG records as two sidecar text files: one raw sample per line (360 Hz,
  11-bit values 0..2047), and one ``peak_index,label`` annotation per line.
  Any WFDB exporter that writes a single channel and the beat annotations
  can produce these.
* Labeled CSV: ``label,f1,f2,...`` per line, for tabular/synthetic data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from drbfdd.errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

ECG_RATE_IN = 360
ECG_RATE_OUT = 187
BEAT_LENGTH = 417
ECG_FULL_SCALE = 2047.0
ECG_PAD_VALUE = 0.50


@dataclass
class LabeledSet:
    instances: np.ndarray
    labels: np.ndarray
    source: str = ""

    def __post_init__(self):
        if len(self.instances) != len(self.labels):
            raise DataError(
                f"{self.source}: {len(self.instances)} instances but {len(self.labels)} labels"
            )


@dataclass
class HeartbeatRecord:
    samples: np.ndarray
    label: str
    subject: str = ""


@dataclass
class Scenario:
    name: str
    normal: np.ndarray
    anomalous: np.ndarray
    modality: str = "vector"


# ---------------------------------------------------------------------------
# IDX


def _read_idx(path, expected_magic):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header ({len(raw)} bytes, need {header})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise DataError(
            f"{path}: truncated payload, header declares {need} bytes but {len(raw) - header} present"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledSet:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"count mismatch: {images_path} holds {images.shape[0]} images, "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    return LabeledSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), Path(images_path).name)


def load_idx_images(path) -> np.ndarray:
    return _read_idx(path, IDX_IMAGES_MAGIC).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# ECG


def read_signal(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise DataError(f"{path}:{lineno}: not a number: {text!r}") from None
    return np.array(values)


def read_annotations(path) -> tuple[np.ndarray, list[str]]:
    peaks, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 2 or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'peak_index,label', got {text!r}")
            try:
                peaks.append(int(parts[0]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad peak index {parts[0]!r}") from None
            labels.append(parts[1])
    return np.array(peaks, dtype=np.int64), labels


def resample_linear(signal, rate_in: int = ECG_RATE_IN, rate_out: int = ECG_RATE_OUT) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        return signal.copy()
    duration = (signal.size - 1) / rate_in
    n_out = int(np.floor(duration * rate_out + 1e-9)) + 1
    t_out = np.arange(n_out) / rate_out
    t_in = np.arange(signal.size) / rate_in
    return np.interp(t_out, t_in, signal)


def fit_length(beat, length: int = BEAT_LENGTH, pad_value: float = ECG_PAD_VALUE) -> np.ndarray:
    """Truncate the tail or right-pad with ``pad_value`` to exactly ``length`` samples."""
    beat = np.asarray(beat, dtype=np.float64)
    if beat.size >= length:
        return beat[:length].copy()
    return np.concatenate([beat, np.full(length - beat.size, pad_value)])


def segment_heartbeats(signal, peaks, labels, subject: str = "") -> list[HeartbeatRecord]:
    """Cut a 360 Hz raw ECG channel into fixed-length normalised beats.

    The signal is scaled by 1/2047, linearly resampled to 187 Hz, and split at
    the midpoints between consecutive (rescaled) peaks; the first beat starts
    at the signal start and the last ends at the signal end.
    """
    signal = np.asarray(signal, dtype=np.float64)
    peaks = np.asarray(peaks, dtype=np.int64)
    labels = list(labels)
    if len(labels) != peaks.size:
        raise DataError(f"{peaks.size} peaks but {len(labels)} labels")
    if peaks.size and np.any(np.diff(peaks) <= 0):
        bad = int(np.nonzero(np.diff(peaks) <= 0)[0][0]) + 1
        raise DataError(f"peak indices must be strictly increasing (violated at annotation {bad})")
    if peaks.size and (peaks[0] < 0 or peaks[-1] >= signal.size):
        raise DataError(f"peak indices must lie in [0, {signal.size})")
    if signal.size and (signal.min() < 0 or signal.max() > ECG_FULL_SCALE):
        pos = int(np.nonzero((signal < 0) | (signal > ECG_FULL_SCALE))[0][0])
        raise DataError(f"sample {pos} = {signal[pos]} outside the 11-bit range [0, 2047]")

    resampled = resample_linear(signal / ECG_FULL_SCALE)
    mapped = np.rint(peaks * (ECG_RATE_OUT / ECG_RATE_IN)).astype(np.int64)
    mapped = np.clip(mapped, 0, max(resampled.size - 1, 0))
    borders = [0] + [int((a + b) // 2) for a, b in zip(mapped[:-1], mapped[1:])] + [resampled.size]
    return [
        HeartbeatRecord(fit_length(resampled[borders[i] : borders[i + 1]]), str(labels[i]), subject)
        for i in range(peaks.size)
    ]


def load_ecg_record(signal_path, annotations_path) -> list[HeartbeatRecord]:
    signal = read_signal(signal_path)
    peaks, labels = read_annotations(annotations_path)
    return segment_heartbeats(signal, peaks, labels, subject=Path(signal_path).stem)


def heartbeats_to_set(records: list[HeartbeatRecord], source: str = "ecg") -> LabeledSet:
    if not records:
        return LabeledSet(np.zeros((0, BEAT_LENGTH)), np.array([], dtype=object), source)
    return LabeledSet(
        np.stack([r.samples for r in records]),
        np.array([r.label for r in records], dtype=object),
        source,
    )


# ---------------------------------------------------------------------------
# CSV


def load_labeled_csv(path) -> LabeledSet:
    rows, labels = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(",")
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature in {text!r}") from None
            if width is None:
                width = len(values)
            if len(values) != width or width == 0:
                raise DataError(f"{path}:{lineno}: expected {width} features, got {len(values)}")
            labels.append(parts[0].strip())
            rows.append(values)
    inst = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    return LabeledSet(inst, np.array(labels, dtype=object), Path(path).name)


def load_feature_csv(path) -> np.ndarray:
    """Unlabeled instances, one comma-separated row per line."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values = [float(v) for v in text.split(",")]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in {text!r}") from None
            if width is None:
                width = len(values)
            if len(values) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, got {len(values)}")
            rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


# ---------------------------------------------------------------------------
# scenarios


def _modality(instances):
    if instances.ndim == 3:
        return "image2d"
    if instances.ndim == 2 and instances.shape[1] == BEAT_LENGTH:
        return "signal1d"
    return "vector"


def build_scenario(data, normal_label, anomaly_labels, name: str | None = None, modality: str | None = None) -> Scenario:
    """Split a labeled set into one normal class and one or more anomalous classes.

    Labels are matched on their string form, so ``0`` and ``"0"`` are the
    same class. Instances with any other label are dropped.
    """
    if isinstance(data, list):
        data = heartbeats_to_set(data)
    if isinstance(anomaly_labels, (str, int, np.integer)):
        anomaly_labels = [anomaly_labels]
    normal_key = str(normal_label)
    anomaly_keys = [str(a) for a in anomaly_labels]
    if not anomaly_keys:
        raise DataError("at least one anomaly label is required")
    if normal_key in anomaly_keys:
        raise DataError(f"label {normal_key!r} cannot be both normal and anomalous")
    keys = np.array([str(l) for l in data.labels], dtype=object)
    present = set(keys.tolist())
    for k in [normal_key] + anomaly_keys:
        if k not in present:
            raise DataError(f"label {k!r} not present in {data.source or 'data set'}")
    normal = data.instances[keys == normal_key]
    anomalous = data.instances[np.isin(keys, anomaly_keys)]
    if len(normal) == 0:
        raise DataError(f"no instances for normal label {normal_key!r}")
    if name is None:
        name = f"{normal_key}-{'+'.join(anomaly_keys)}"
    return Scenario(name, normal, anomalous, modality or _modality(data.instances))


def one_vs_all(data, normal_label, anomaly_labels, name: str | None = None) -> Scenario:
    """Normal class against the union of several anomalous classes."""
    anomaly_labels = list(anomaly_labels)
    return build_scenario(data, normal_label, anomaly_labels, name or f"{normal_label}-vs-all")


def gaussian_blob_scenario(
    n_normal: int = 500, n_outliers: int = 100, dim: int = 2, box: float = 6.0, seed: int = 0
) -> Scenario:
    """Standard-normal blob as the normal class, uniform points in ``[-box, box]^dim`` as anomalies."""
    rng = np.random.default_rng(seed)
    normal = rng.normal(size=(n_normal, dim))
    anomalous = rng.uniform(-box, box, size=(n_outliers, dim))
    return Scenario("blob", normal, anomalous, "vector")


def subsample_scenario(scenario: Scenario, n_normal: int = 0, n_anomalous: int = 0, seed: int = 0) -> Scenario:
    """Keep at most ``n_normal`` / ``n_anomalous`` instances (0 keeps all), drawn without replacement."""
    rng = np.random.default_rng(seed)

    def take(x, n):
        if n and len(x) > n:
            return x[np.sort(rng.permutation(len(x))[:n])]
        return x

    return Scenario(scenario.name, take(scenario.normal, n_normal), take(scenario.anomalous, n_anomalous), scenario.modality)
