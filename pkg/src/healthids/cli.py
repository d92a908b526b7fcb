"""Command-line entry point: ``healthids <command> [flags]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, nslkdd, surrogate
from .agents import SimConfig, load_config, run_simulation
from .evaluation import emit_report, evaluate_layers, time_layers
from .ids import ANOMALY, LAYERS, MISUSE, LayeredIDS
from .nslkdd import (ANOMALY_TEST_COUNTS, ANOMALY_TRAIN_COUNTS, MISUSE_TEST_COUNTS, MISUSE_TRAIN_COUNTS,
                     DatasetSpec, FeatureSchema)
from .svm import (BinaryModel, ConvergenceWarning, KernelSpec, ModelFileError, MulticlassModel, SvmParams,
                  load_model, save_model, train_binary, train_multiclass)

log = logging.getLogger("healthids")

DATA_DIR_ENV = "HEALTHIDS_DATA_DIR"
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


class DataError(Exception):
    pass


def _default_source(name: str) -> str | None:
    root = os.environ.get(DATA_DIR_ENV)
    return str(Path(root) / name) if root else None


def _sha256(path) -> str:
    return nslkdd.file_digest(path)


def write_manifest(path, command: str, argv, *, seeds: dict, inputs: dict, outputs: dict,
                   config: dict | None = None, warnings_: list | None = None, started: float) -> dict:
    manifest = {
        "command": command,
        "argv": list(argv),
        "tool_version": __version__,
        "seeds": seeds,
        "config_digest": hashlib.sha256(json.dumps(config or {}, sort_keys=True).encode()).hexdigest(),
        "config": config or {},
        "inputs": inputs,
        "outputs": outputs,
        "warnings": warnings_ or [],
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _need_file(path, what: str) -> Path:
    if not path:
        raise DataError(f"no {what} given (pass the flag or set {DATA_DIR_ENV})")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


# --- commands -----------------------------------------------------------------------


def cmd_synth_data(args, argv) -> int:
    train, test = surrogate.write_corpus(args.out, seed=args.seed)
    print(f"wrote {train} and {test}")
    return EXIT_OK


def cmd_build_data(args, argv) -> int:
    started = time.time()
    train_file = _need_file(args.train_file or _default_source("KDDTrain+.txt"), "train file")
    test_file = _need_file(args.test_file or _default_source("KDDTest+.txt"), "test file")
    train_src = nslkdd.parse_file(train_file)
    test_src = nslkdd.parse_file(test_file)
    spec = DatasetSpec(seed=args.seed)
    try:
        misuse = nslkdd.build_misuse_dataset(train_src, test_src, spec)
    except nslkdd.InsufficientRecordsError as exc:
        raise DataError(str(exc)) from exc
    anomaly = nslkdd.Split(nslkdd.to_binary(misuse.train), nslkdd.to_binary(misuse.test), dict(misuse.fallback))
    problems = (nslkdd.check_counts(misuse, MISUSE_TRAIN_COUNTS, MISUSE_TEST_COUNTS)
                + nslkdd.check_counts(anomaly, ANOMALY_TRAIN_COUNTS, ANOMALY_TEST_COUNTS))
    out = Path(args.out)
    sidecar = nslkdd.save_datasets(out, anomaly, misuse, seed=args.seed,
                                   sources={"train": str(train_file), "test": str(test_file)})
    schema = nslkdd.fit_schema(misuse.train)
    (out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=2, sort_keys=True) + "\n")
    for part in ("train", "test"):
        counts = misuse.counts()[part]
        print(f"{part}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    print(f"train total {len(misuse.train)}, test total {len(misuse.test)}")
    print(f"anomaly train attack {anomaly.counts()['train'].get('attack', 0)} normal "
          f"{anomaly.counts()['train'].get('normal', 0)}; test attack {anomaly.counts()['test'].get('attack', 0)} "
          f"normal {anomaly.counts()['test'].get('normal', 0)}")
    outputs = dict(sidecar["files"])
    outputs["schema.json"] = _sha256(out / "schema.json")
    write_manifest(out / "manifest.json", "build-data", argv, seeds={"sampling": args.seed},
                   inputs={k: v["sha256"] for k, v in sidecar["sources"].items()}, outputs=outputs,
                   started=started)
    if problems:
        for p in problems:
            print(f"count mismatch: {p}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _load_schema(data_dir: Path) -> FeatureSchema:
    p = _need_file(data_dir / "schema.json", "schema file")
    return FeatureSchema.from_dict(json.loads(p.read_text()))


def _data_dir(args) -> Path:
    d = Path(args.data)
    if not d.is_dir():
        raise DataError(f"dataset directory not found: {d}")
    return d


def cmd_train(args, argv) -> int:
    started = time.time()
    data_dir = _data_dir(args)
    schema = _load_schema(data_dir)
    split_file = _need_file(data_dir / nslkdd.SPLIT_FILES[(args.layer, "train")], f"{args.layer} train split")
    records = nslkdd.read_split(split_file)
    X = nslkdd.encode_matrix(records, schema)
    kernel = KernelSpec("rbf", args.gamma) if args.gamma else KernelSpec.default_for(schema.dimension)
    params = SvmParams(c=args.c, seed=args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        if args.layer == ANOMALY:
            y = np.array([1.0 if r.label != nslkdd.NORMAL else -1.0 for r in records])
            model = train_binary(X, y, params, kernel, class_pair=(nslkdd.ATTACK, nslkdd.NORMAL))
            converged = model.converged
        else:
            model = train_multiclass(X, [r.label for r in records], params, kernel, n_jobs=args.jobs)
            converged = all(p.converged for p in model.pairs)
    notes = [str(w.message) for w in caught if issubclass(w.category, ConvergenceWarning)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checksum = save_model(model, out)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "train", argv,
                   seeds={"svm": args.seed},
                   config={"layer": args.layer, "c": args.c, "gamma": kernel.gamma, "kernel": kernel.kind},
                   inputs={split_file.name: _sha256(split_file)}, outputs={out.name: _sha256(out)},
                   warnings_=notes, started=started)
    print(f"{args.layer} model -> {out} (checksum {checksum[:12]}, converged={converged})")
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    if not converged and args.strict:
        return EXIT_CONVERGENCE
    return EXIT_OK


def _load_ids(args, data_dir: Path) -> LayeredIDS:
    schema = _load_schema(data_dir)
    anomaly = load_model(_need_file(args.anomaly_model, "anomaly model"))
    misuse = load_model(_need_file(args.misuse_model, "misuse model"))
    if not isinstance(anomaly, BinaryModel) or not isinstance(misuse, MulticlassModel):
        raise DataError("expected a binary anomaly model and a multiclass misuse model")
    return LayeredIDS(schema, anomaly, misuse)


def cmd_eval(args, argv) -> int:
    started = time.time()
    data_dir = _data_dir(args)
    ids = _load_ids(args, data_dir)
    test_file = _need_file(data_dir / nslkdd.SPLIT_FILES[(MISUSE, "test")], "misuse test split")
    records = nslkdd.read_split(test_file)
    X = ids.encode(records)
    metrics = evaluate_layers(ids, records, X)
    resources = time_layers(ids, X, repeats=args.repeats)
    csv_path, json_path = emit_report(metrics, resources, args.out)
    print(f"{'layer':8s} {'DR%':>7s} {'DRlen%':>7s} {'FPR%':>6s} {'acc%':>6s} {'time s':>8s} {'mem MB':>8s}")
    for layer in LAYERS:
        m, r = metrics[layer], resources[layer]
        print(f"{layer:8s} {m.detection_rate:7.2f} {m.detection_rate_lenient:7.2f} {m.false_positive_rate:6.2f} "
              f"{m.accuracy:6.2f} {r.mean_runtime:8.4f} {r.mean_peak_mem_mb:8.1f}")
    write_manifest(Path(args.out) / "manifest.json", "eval", argv, seeds={},
                   config={"repeats": args.repeats},
                   inputs={test_file.name: _sha256(test_file), "anomaly_model": _sha256(args.anomaly_model),
                           "misuse_model": _sha256(args.misuse_model)},
                   outputs={"report.csv": _sha256(csv_path), "report.json": _sha256(json_path)},
                   started=started)
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    started = time.time()
    try:
        config = load_config(args.config) if args.config else SimConfig()
    except (ValueError, TypeError) as exc:
        raise DataError(f"invalid config: {exc}") from exc
    if args.seed is not None:
        config.seed = args.seed
    data_dir = _data_dir(args)
    ids = _load_ids(args, data_dir)
    test = nslkdd.read_split(_need_file(data_dir / nslkdd.SPLIT_FILES[(MISUSE, "test")], "misuse test split"))
    benign = [r for r in test if r.label == nslkdd.NORMAL]
    attacks = nslkdd.filter_attacks(test)
    trace = run_simulation(config, ids, benign, attacks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.ndjson", out / "summary.csv")
    print(f"emitted {trace.emitted}, delivered {trace.delivered_count}, blocked {trace.blocked_count}")
    for layer, c in trace.counts().items():
        print(f"  {layer:8s} delivered {c['delivered']:6d} blocked {c['blocked']:5d} "
              f"(attacks {c['blocked_attack']}, benign {c['blocked_benign']}, missed {c['missed_attack']})")
    print(f"trace digest {trace.digest()}")
    write_manifest(out / "manifest.json", "simulate", argv, seeds={"simulation": config.seed},
                   config=config.to_dict(),
                   inputs={"anomaly_model": _sha256(args.anomaly_model), "misuse_model": _sha256(args.misuse_model)},
                   outputs={"trace.ndjson": _sha256(out / "trace.ndjson"), "summary.csv": _sha256(out / "summary.csv"),
                            "trace_digest": trace.digest()},
                   started=started)
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="healthids", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic NSL-KDD-format corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("build-data", help="build the anomaly and misuse train/test splits")
    p.add_argument("--train-file", help=f"KDDTrain+.txt (default ${DATA_DIR_ENV}/KDDTrain+.txt)")
    p.add_argument("--test-file", help=f"KDDTest+.txt (default ${DATA_DIR_ENV}/KDDTest+.txt)")
    p.add_argument("--seed", type=int, default=nslkdd.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train the anomaly or misuse model")
    p.add_argument("--data", required=True, help="dataset directory written by build-data")
    p.add_argument("--layer", choices=(ANOMALY, MISUSE), required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None, help="RBF gamma (default 1/encoded dimension)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel pair trainers for the misuse layer")
    p.add_argument("--strict", action="store_true", help="exit non-zero if SMO does not converge")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate all three layers and write the report"),
                                 ("simulate", cmd_simulate, "run the agent simulation")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="dataset directory written by build-data")
        p.add_argument("--anomaly-model", required=True)
        p.add_argument("--misuse-model", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--repeats", type=_positive_int, default=10)
        else:
            p.add_argument("--config")
            p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except (DataError, FileNotFoundError, nslkdd.ParseError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
