"""Run configuration files.

Plain ``key = value`` lines; ``#`` starts a comment. Keys are the
:class:`~drbfdd.optim.TrainConfig` fields (``lambda`` is accepted for
``lam``) plus the run keys listed in :data:`RUN_KEYS`.

A grid is written as repeated ``[grid]`` blocks. Each block overrides the
base keys; comma-separated values inside a block expand to the Cartesian
product, in the order the keys appear. Cells keep file order::

    model = rbfdd
    csv = blobs.csv
    normal = normal
    anomalies = outlier

    [grid]
    H = 4, 8
    beta = 0.001

    [grid]
    H = 16
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path

from drbfdd.errors import ConfigError
from drbfdd.optim import TrainConfig

RUN_KEYS = {
    "images": "IDX image file",
    "labels": "IDX label file",
    "ecg_signal": "comma-separated ECG signal sidecar files",
    "ecg_annotations": "comma-separated ECG annotation sidecar files (same order)",
    "csv": "labeled CSV file (label,f1,f2,...)",
    "normal": "normal class label",
    "anomalies": "comma-separated anomalous class labels",
    "normal_limit": "use at most this many normal instances (0 = all)",
    "anomaly_limit": "use at most this many anomalous instances (0 = all)",
    "iterations": "bootstrap iterations (default 10)",
    "train_fraction": "fraction of normals used for training (default 0.8)",
    "scenario": "scenario name in reports",
    "out": "output directory",
}

_ALIASES = {"lambda": "lam"}
_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


@dataclass
class RunConfig:
    train: TrainConfig
    images: str | None = None
    labels: str | None = None
    ecg_signal: list[str] = field(default_factory=list)
    ecg_annotations: list[str] = field(default_factory=list)
    csv: str | None = None
    normal: str | None = None
    anomalies: list[str] = field(default_factory=list)
    normal_limit: int = 0
    anomaly_limit: int = 0
    iterations: int = 10
    train_fraction: float = 0.8
    scenario: str | None = None
    out: str = "."
    grid: list[TrainConfig] = field(default_factory=list)

    @property
    def modality(self) -> str:
        if self.images:
            return "image2d"
        if self.ecg_signal:
            return "signal1d"
        return "vector"


def _convert(key, raw, lineno, path):
    key = _ALIASES.get(key, key)
    if key in _TRAIN_TYPES:
        typ = _TRAIN_TYPES[key]
        try:
            if typ in ("int", int):
                return key, int(raw)
            if typ in ("float", float):
                return key, float(raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: key {key!r}: cannot parse {raw!r}") from None
        return key, raw
    if key in RUN_KEYS:
        return key, raw
    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")


def _split_list(raw):
    return [p.strip() for p in raw.split(",") if p.strip()]


def parse_config_text(text: str, path: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    base: dict[str, tuple[str, int]] = {}
    blocks: list[list[tuple[str, str, int]]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if stripped != "[grid]":
                raise ConfigError(f"{path}:{lineno}: unknown section {stripped!r}")
            blocks.append([])
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _TRAIN_TYPES and key not in RUN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if blocks:
            if key not in _TRAIN_TYPES:
                raise ConfigError(f"{path}:{lineno}: key {key!r} cannot vary inside [grid]")
            blocks[-1].append((key, raw, lineno))
        else:
            if key in base:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            base[key] = (raw, lineno)

    train_kw, run_kw = {}, {}
    for key, (raw, lineno) in base.items():
        key, value = _convert(key, raw, lineno, path)
        (train_kw if key in _TRAIN_TYPES else run_kw)[key] = value
    try:
        train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    grid = []
    for block in blocks:
        choices = []
        for key, raw, lineno in block:
            choices.append([_convert(key, v, lineno, path) for v in _split_list(raw)])
        for combo in itertools.product(*choices):
            try:
                grid.append(train.replace(**dict(combo)))
            except ValueError as exc:
                raise ConfigError(f"{path}: grid cell {len(grid) + 1}: {exc}") from None

    cfg = RunConfig(train=train, grid=grid)
    for key, raw in run_kw.items():
        lineno = base[key][1]
        try:
            if key in ("normal_limit", "anomaly_limit", "iterations"):
                value = int(raw)
            elif key == "train_fraction":
                value = float(raw)
            elif key in ("ecg_signal", "ecg_annotations", "anomalies"):
                value = _split_list(raw)
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: key {key!r}: cannot parse {raw!r}") from None
        if key in ("images", "labels", "csv", "ecg_signal", "ecg_annotations") and base_dir is not None:
            resolve = lambda p: str(p if Path(p).is_absolute() else base_dir / p)
            value = [resolve(v) for v in value] if isinstance(value, list) else resolve(value)
        setattr(cfg, key, value)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path), path.parent)


def validate(cfg: RunConfig, need_scenario: bool = True) -> None:
    """Check paths exist and that the model kind suits the data modality."""
    sources = sum([bool(cfg.images or cfg.labels), bool(cfg.ecg_signal), bool(cfg.csv)])
    if sources != 1:
        raise ConfigError("configure exactly one data source: images+labels, ecg_signal+ecg_annotations, or csv")
    if (cfg.images is None) != (cfg.labels is None):
        raise ConfigError("'images' and 'labels' must be given together")
    if len(cfg.ecg_signal) != len(cfg.ecg_annotations):
        raise ConfigError(
            f"{len(cfg.ecg_signal)} ecg_signal files but {len(cfg.ecg_annotations)} ecg_annotations files"
        )
    for p in [cfg.images, cfg.labels, cfg.csv, *cfg.ecg_signal, *cfg.ecg_annotations]:
        if p is not None and not Path(p).exists():
            raise ConfigError(f"path does not exist: {p}")
    if cfg.normal is None:
        raise ConfigError("missing key 'normal'")
    if need_scenario and not cfg.anomalies:
        raise ConfigError("missing key 'anomalies'")
    kinds = {cfg.train.model} | {g.model for g in cfg.grid}
    if "drbfdd-2d" in kinds and cfg.modality != "image2d":
        raise ConfigError("model 'drbfdd-2d' needs image data (images/labels)")
    if "drbfdd-1d" in kinds and cfg.modality == "image2d":
        raise ConfigError("model 'drbfdd-1d' needs signal data (ecg_signal or csv)")
    if cfg.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")


def format_train_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        name = "lambda" if key == "lam" else key
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    return "\n".join(lines) + "\n"
