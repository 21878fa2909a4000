"""Command line: ``drbfdd train|score|eval|gridsearch``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from drbfdd import data as dmod
from drbfdd import iforest
from drbfdd.config import RunConfig, format_train_config, load_config, validate
from drbfdd.deep import build_model, load_model, save_model
from drbfdd.errors import ConfigError, DataError, ShapeError, TrainingDiverged
from drbfdd.evalkit import evaluate, grid_search, reports_to_csv
from drbfdd.optim import train

log = logging.getLogger("drbfdd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# data assembly


def load_dataset(cfg: RunConfig) -> dmod.LabeledSet:
    if cfg.images:
        return dmod.load_idx(cfg.images, cfg.labels)
    if cfg.ecg_signal:
        records = []
        for sig, ann in zip(cfg.ecg_signal, cfg.ecg_annotations):
            records += dmod.load_ecg_record(sig, ann)
        return dmod.heartbeats_to_set(records, "ecg")
    return dmod.load_labeled_csv(cfg.csv)


def _limit(x, n, rng):
    if n and len(x) > n:
        return x[np.sort(rng.permutation(len(x))[:n])]
    return x


def build_run_scenario(cfg: RunConfig, ds: dmod.LabeledSet | None = None) -> dmod.Scenario:
    ds = ds if ds is not None else load_dataset(cfg)
    modality = cfg.modality if cfg.modality != "vector" or cfg.train.model != "drbfdd-1d" else "signal1d"
    sc = dmod.build_scenario(ds, cfg.normal, cfg.anomalies, cfg.scenario, modality)
    return dmod.subsample_scenario(sc, cfg.normal_limit, cfg.anomaly_limit, cfg.train.seed)


def _normal_instances(cfg: RunConfig) -> tuple[np.ndarray, str]:
    ds = load_dataset(cfg)
    keys = np.array([str(l) for l in ds.labels], dtype=object)
    normal = ds.instances[keys == str(cfg.normal)]
    if len(normal) == 0:
        raise DataError(f"no instances with normal label {cfg.normal!r}")
    normal = _limit(normal, cfg.normal_limit, np.random.default_rng(cfg.train.seed))
    modality = cfg.modality if cfg.modality != "vector" or cfg.train.model != "drbfdd-1d" else "signal1d"
    return normal, modality


def _outdir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.out if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    validate(cfg, need_scenario=False)
    out = _outdir(args, cfg)
    normal, modality = _normal_instances(cfg)
    tc = cfg.train
    if tc.model == "iforest":
        forest = iforest.fit(normal.reshape(len(normal), -1), tc.n_estimators, tc.subsample, tc.seed)
        model_path = out / "model.iforest.json"
        model_path.write_text(json.dumps(iforest.forest_to_dict(forest), sort_keys=True) + "\n")
        (out / "train_report.csv").write_text("epoch,loss\n")
    else:
        model = build_model(tc.model, normal.shape[1:], tc.H, tc.seed, modality=modality)
        report = train(model, normal, tc)
        model_path = out / "model.drbf"
        save_model(report.model, model_path)
        lines = ["epoch,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(report.losses, start=1)]
        (out / "train_report.csv").write_text("\n".join(lines) + "\n")
        log.info("trained %s on %d instances in %.1fs", tc.model, len(normal), report.seconds)
    print(model_path)
    return EXIT_OK


def _read_score_data(path, annotations=None) -> tuple[np.ndarray, str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file does not exist: {path}")
    head = path.read_bytes()[:4]
    if len(head) == 4 and int.from_bytes(head, "big") == dmod.IDX_IMAGES_MAGIC:
        return dmod.load_idx_images(path), "image2d"
    if annotations is not None:
        beats = dmod.load_ecg_record(path, annotations)
        return dmod.heartbeats_to_set(beats).instances, "signal1d"
    return dmod.load_feature_csv(path), "vector"


def cmd_score(args) -> int:
    X, modality = _read_score_data(args.data, args.annotations)
    model_path = Path(args.model)
    if not model_path.exists():
        raise DataError(f"model file does not exist: {model_path}")
    raw = model_path.read_bytes()
    if raw[:1] == b"{":
        try:
            forest = iforest.forest_from_dict(json.loads(raw))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"corrupt model file: {exc}") from None
        kind_modality = None
        scorer = lambda A: iforest.score(forest, A.reshape(len(A), -1))
    else:
        model = load_model(model_path)
        kind_modality = model.modality
        scorer = model.score
    if modality == "image2d" and kind_modality not in (None, "image2d"):
        raise DataError(f"modality mismatch: image data but the model expects {kind_modality} input")
    if kind_modality == "image2d" and modality == "signal1d":
        raise DataError("modality mismatch: signal data but the model expects images")
    scores = scorer(X) if len(X) else np.zeros(0)
    out = _outdir(args, None)
    dest = out / "scores.csv"
    lines = ["id,score"] + [f"{i},{float(s)!r}" for i, s in enumerate(scores)]
    dest.write_text("\n".join(lines) + "\n")
    print(dest)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    validate(cfg)
    out = _outdir(args, cfg)
    sc = build_run_scenario(cfg)
    report = evaluate(sc, cfg.train, cfg.iterations, train_fraction=cfg.train_fraction)
    dest = out / "eval_report.csv"
    dest.write_text(reports_to_csv([report]))
    log.info("%s %s mean AUC %.4f", sc.name, cfg.train.model, report.mean_auc)
    print(dest)
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    cfg = load_config(args.config)
    validate(cfg)
    if not cfg.grid:
        raise ConfigError(f"{args.config}: no [grid] blocks, the grid is empty")
    out = _outdir(args, cfg)
    sc = build_run_scenario(cfg)
    best, reports = grid_search(sc, cfg.grid, cfg.iterations, cfg.train_fraction, workers=args.workers)
    (out / "grid_report.csv").write_text(reports_to_csv(reports))
    best_idx = next(i for i, g in enumerate(cfg.grid) if g is best)
    header = (
        f"# best of {len(cfg.grid)} grid cells (cell {best_idx + 1}), mean AUC {reports[best_idx].mean_auc!r}\n"
        "# chosen on the evaluation AUC itself, so this value is optimistic;\n"
        "# use it to compare methods tuned the same way\n"
    )
    (out / "best_config.cfg").write_text(header + format_train_config(best))
    print(out / "grid_report.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drbfdd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--workers", type=int, default=1, help="parallel grid cells")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="train a model on the normal class")
    s.add_argument("config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score instances with a saved model")
    s.add_argument("model")
    s.add_argument("data", help="feature CSV, IDX image file, or ECG signal sidecar")
    s.add_argument("--annotations", default=None, help="ECG annotation sidecar (score beats)")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", parents=[common], help="bootstrap AUC evaluation")
    s.add_argument("config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gridsearch", parents=[common], help="evaluate every [grid] cell")
    s.add_argument("config")
    s.set_defaults(func=cmd_gridsearch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
