"""NSL-KDD parsing, DoS/U2R extraction, dataset construction and feature encoding."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins",
    "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files",
    "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate",
    "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
    "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count",
    "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate",
    "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)
N_FEATURES = len(FEATURE_NAMES)
CATEGORICAL = (1, 2, 3)  # protocol_type, service, flag
CONTINUOUS = tuple(i for i in range(N_FEATURES) if i not in CATEGORICAL)
# NSL-KDD writes every *_rate column with two decimals and everything else as an integer.
_RATE_COLUMNS = frozenset(i for i, n in enumerate(FEATURE_NAMES) if n.endswith("_rate"))

NORMAL = "normal"
ATTACK = "attack"

ATTACK_CATALOG: Mapping[str, str] = {
    "back": "DoS",
    "buffer_overflow": "U2R",
    "land": "DoS",
    "loadmodule": "U2R",
    "neptune": "DoS",
    "perl": "U2R",
    "pod": "DoS",
    "rootkit": "U2R",
    "smurf": "DoS",
    "teardrop": "DoS",
}

MISUSE_TRAIN_COUNTS = {
    "neptune": 300, "back": 300, "smurf": 300, "buffer_overflow": 30,
    "pod": 201, "loadmodule": 9, "perl": 3, "land": 18, "rootkit": 10,
    "teardrop": 300, NORMAL: 4000,
}
MISUSE_TEST_COUNTS = {
    "neptune": 300, "back": 300, "smurf": 300, "buffer_overflow": 20,
    "pod": 41, "loadmodule": 2, "perl": 2, "land": 7, "rootkit": 13,
    "teardrop": 12, NORMAL: 4000,
}
ANOMALY_TRAIN_COUNTS = {ATTACK: 1471, NORMAL: 4000}
ANOMALY_TEST_COUNTS = {ATTACK: 997, NORMAL: 4000}

DEFAULT_SEED = 42


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class InsufficientRecordsError(ValueError):
    """A class has fewer source records than the dataset spec asks for."""


@dataclass(frozen=True)
class TrafficRecord:
    features: tuple
    label: str
    difficulty: int | None = None

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {len(self.features)}")


def _format_value(col: int, value) -> str:
    if col in CATEGORICAL:
        return value
    if col in _RATE_COLUMNS:
        return f"{value:.2f}"
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def format_record(record: TrafficRecord) -> str:
    """Render a record back into an NSL-KDD line (no trailing newline)."""
    parts = [_format_value(i, v) for i, v in enumerate(record.features)]
    parts.append(record.label)
    if record.difficulty is not None:
        parts.append(str(record.difficulty))
    return ",".join(parts)


def parse_line(line: str, lineno: int = 0, path="<string>") -> TrafficRecord:
    tokens = [t.strip() for t in line.strip().split(",")]
    if len(tokens) not in (N_FEATURES + 1, N_FEATURES + 2):
        raise ParseError(path, lineno, f"expected {N_FEATURES + 1} or {N_FEATURES + 2} fields, got {len(tokens)}")
    features = []
    for i in range(N_FEATURES):
        tok = tokens[i]
        if i in CATEGORICAL:
            features.append(tok)
            continue
        try:
            features.append(float(tok))
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric value {tok!r} in column {FEATURE_NAMES[i]}") from None
    label = tokens[N_FEATURES].rstrip(".")
    difficulty = None
    if len(tokens) == N_FEATURES + 2:
        try:
            difficulty = int(tokens[N_FEATURES + 1])
        except ValueError:
            raise ParseError(path, lineno, f"non-integer difficulty {tokens[-1]!r}") from None
    return TrafficRecord(tuple(features), label, difficulty)


def parse_file(path) -> list[TrafficRecord]:
    """Parse an NSL-KDD text file. Blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"NSL-KDD file not found: {path}")
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_line(line, lineno, path))
    return records


def filter_attacks(
    records: Iterable[TrafficRecord], catalog: Mapping[str, str] = ATTACK_CATALOG
) -> dict[str, list[TrafficRecord]]:
    """Group catalog attacks by name, preserving source order. Other labels are dropped."""
    out: dict[str, list[TrafficRecord]] = {name: [] for name in sorted(catalog)}
    skipped: Counter = Counter()
    for r in records:
        if r.label in out:
            out[r.label].append(r)
        else:
            skipped[r.label] += 1
    if skipped:
        log.debug("filter_attacks excluded %d records: %s", sum(skipped.values()), dict(skipped))
    return out


@dataclass
class DatasetSpec:
    train_counts: dict[str, int] = field(default_factory=lambda: dict(MISUSE_TRAIN_COUNTS))
    test_counts: dict[str, int] = field(default_factory=lambda: dict(MISUSE_TEST_COUNTS))
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name, n in {**self.train_counts, **self.test_counts}.items():
            if n < 0:
                raise ValueError(f"negative count for {name}: {n}")

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.train_counts) | set(self.test_counts))


@dataclass
class Split:
    """A built train/test pair plus bookkeeping about where test rows came from."""

    train: list[TrafficRecord]
    test: list[TrafficRecord]
    fallback: dict[str, int] = field(default_factory=dict)

    def counts(self) -> dict[str, dict[str, int]]:
        return {
            "train": dict(sorted(Counter(r.label for r in self.train).items())),
            "test": dict(sorted(Counter(r.label for r in self.test).items())),
        }


def _class_pools(records: Sequence[TrafficRecord], classes) -> dict[str, list[int]]:
    pools: dict[str, list[int]] = {c: [] for c in classes}
    for idx, r in enumerate(records):
        if r.label in pools:
            pools[r.label].append(idx)
    return pools


def _draw(rng: np.random.Generator, pool: Sequence[int], n: int, what: str) -> list[int]:
    if n > len(pool):
        raise InsufficientRecordsError(f"{what}: requested {n}, only {len(pool)} available")
    if n == 0:
        return []
    picked = rng.choice(len(pool), size=n, replace=False)
    return sorted(pool[i] for i in picked)


def build_misuse_dataset(
    train_source: Sequence[TrafficRecord],
    test_source: Sequence[TrafficRecord],
    spec: DatasetSpec | None = None,
) -> Split:
    """Sample the 11-class misuse/hybrid dataset.

    Train rows come from ``train_source``, test rows from ``test_source``. When
    the test source lacks enough rows of a class, the remainder of that class's
    test quota is drawn from train-source rows that were not used for training.
    Passing the same list for both sources keeps train and test disjoint.
    """
    spec = spec or DatasetSpec()
    classes = spec.classes
    rng = np.random.default_rng(spec.seed)
    same_source = train_source is test_source
    train_pools = _class_pools(train_source, classes)
    test_pools = train_pools if same_source else _class_pools(test_source, classes)

    train_idx: list[int] = []
    test_rows: list[TrafficRecord] = []
    fallback_rows: list[TrafficRecord] = []
    fallback: dict[str, int] = {}
    for c in classes:
        picked = _draw(rng, train_pools[c], spec.train_counts.get(c, 0), f"train/{c}")
        train_idx.extend(picked)
        used = set(picked)
        want = spec.test_counts.get(c, 0)
        if same_source:
            pool = [i for i in test_pools[c] if i not in used]
            test_rows.extend(test_source[i] for i in _draw(rng, pool, want, f"test/{c}"))
            continue
        pool = test_pools[c]
        if want <= len(pool):
            test_rows.extend(test_source[i] for i in _draw(rng, pool, want, f"test/{c}"))
            continue
        test_rows.extend(test_source[i] for i in pool)
        spare = [i for i in train_pools[c] if i not in used]
        extra = _draw(rng, spare, want - len(pool), f"test/{c} (train fallback)")
        fallback[c] = len(extra)
        fallback_rows.extend(train_source[i] for i in extra)
        log.warning("test split: %d %s rows drawn from unused train rows", len(extra), c)

    if not same_source:
        # keep file order: rows from the test file first, then fallback rows
        order = {id(r): k for k, r in enumerate(test_source)}
        test_rows.sort(key=lambda r: order[id(r)])
    else:
        order = {id(r): k for k, r in enumerate(train_source)}
        test_rows.sort(key=lambda r: order[id(r)])
    train = [train_source[i] for i in sorted(train_idx)]
    return Split(train, test_rows + fallback_rows, fallback)


def to_binary(records: Iterable[TrafficRecord]) -> list[TrafficRecord]:
    return [r if r.label == NORMAL else replace(r, label=ATTACK) for r in records]


def build_anomaly_dataset(
    train_source: Sequence[TrafficRecord],
    test_source: Sequence[TrafficRecord],
    spec: DatasetSpec | None = None,
) -> Split:
    """Binary normal/attack dataset over exactly the records of the misuse dataset."""
    misuse = build_misuse_dataset(train_source, test_source, spec)
    return Split(to_binary(misuse.train), to_binary(misuse.test), dict(misuse.fallback))


def check_counts(split: Split, train_counts: Mapping[str, int], test_counts: Mapping[str, int]) -> list[str]:
    """Return human-readable mismatches between a split and target counts (empty if exact)."""
    problems = []
    got = split.counts()
    for part, want in (("train", train_counts), ("test", test_counts)):
        have = got[part]
        for c in sorted(set(want) | set(have)):
            if have.get(c, 0) != want.get(c, 0):
                problems.append(f"{part}/{c}: got {have.get(c, 0)}, want {want.get(c, 0)}")
    return problems


# --- encoding -----------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSchema:
    vocabularies: dict[int, tuple[str, ...]]
    minima: np.ndarray
    maxima: np.ndarray
    classes: tuple[str, ...] = ()

    @property
    def dimension(self) -> int:
        return len(CONTINUOUS) + sum(len(v) for v in self.vocabularies.values())

    def to_dict(self) -> dict:
        return {
            "vocabularies": {FEATURE_NAMES[i]: list(v) for i, v in sorted(self.vocabularies.items())},
            "minima": [float(x) for x in self.minima],
            "maxima": [float(x) for x in self.maxima],
            "classes": list(self.classes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        vocab = {FEATURE_NAMES.index(k): tuple(v) for k, v in d["vocabularies"].items()}
        return cls(vocab, np.array(d["minima"], dtype=float), np.array(d["maxima"], dtype=float),
                   tuple(d.get("classes", ())))


@dataclass(frozen=True)
class EncodedVector:
    values: np.ndarray
    class_index: int


def fit_schema(train: Sequence[TrafficRecord]) -> FeatureSchema:
    if not train:
        raise ValueError("cannot fit a schema on an empty split")
    vocab = {i: tuple(sorted({r.features[i] for r in train})) for i in CATEGORICAL}
    cont = np.array([[r.features[i] for i in CONTINUOUS] for r in train], dtype=float)
    classes = tuple(sorted({r.label for r in train}))
    return FeatureSchema(vocab, cont.min(axis=0), cont.max(axis=0), classes)


def encode_matrix(records: Sequence[TrafficRecord], schema: FeatureSchema) -> np.ndarray:
    """Encode many records at once; rows match :func:`encode`."""
    n = len(records)
    out = np.zeros((n, schema.dimension))
    k = len(CONTINUOUS)
    if n:
        cont = np.array([[r.features[i] for i in CONTINUOUS] for r in records], dtype=float)
        span = schema.maxima - schema.minima
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (cont - schema.minima) / safe, 0.0)
        out[:, :k] = np.clip(scaled, 0.0, 1.0)
    offset = k
    for col in CATEGORICAL:
        vocab = schema.vocabularies[col]
        index = {v: j for j, v in enumerate(vocab)}
        for row, r in enumerate(records):
            j = index.get(r.features[col])
            if j is not None:  # unseen categories leave the block at zero
                out[row, offset + j] = 1.0
        offset += len(vocab)
    return out


def encode(record: TrafficRecord, schema: FeatureSchema) -> EncodedVector:
    values = encode_matrix([record], schema)[0]
    try:
        ci = schema.classes.index(record.label)
    except ValueError:
        ci = -1
    return EncodedVector(values, ci)


# --- persistence ----------------------------------------------------------------

SPLIT_HEADER = FEATURE_NAMES + ("label", "difficulty")


def write_split(path, records: Sequence[TrafficRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(SPLIT_HEADER) + "\n")
        for r in records:
            line = format_record(r)
            if r.difficulty is None:
                line += ","
            fh.write(line + "\n")


def read_split(path) -> list[TrafficRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"split file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SPLIT_HEADER:
            raise ParseError(path, 1, "missing or unexpected header")
        for lineno, row in enumerate(reader, start=2):
            if row and row[-1] == "":
                row = row[:-1]
            out.append(parse_line(",".join(row), lineno, path))
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


SPLIT_FILES = {
    ("anomaly", "train"): "anomaly_train.csv",
    ("anomaly", "test"): "anomaly_test.csv",
    ("misuse", "train"): "misuse_train.csv",
    ("misuse", "test"): "misuse_test.csv",
}


def save_datasets(out_dir, anomaly: Split, misuse: Split, *, seed: int, sources: Mapping[str, str]) -> dict:
    """Write the four split files plus ``dataset.json`` and return the sidecar contents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {"anomaly": anomaly, "misuse": misuse}
    digests = {}
    for (layer, part), name in SPLIT_FILES.items():
        write_split(out_dir / name, getattr(splits[layer], part))
        digests[name] = file_digest(out_dir / name)
    sidecar = {
        "seed": seed,
        "sources": {k: {"path": Path(v).name, "sha256": file_digest(v)} for k, v in sorted(sources.items())},
        "counts": {layer: s.counts() for layer, s in splits.items()},
        "test_fallback": misuse.fallback,
        "files": digests,
    }
    (out_dir / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_datasets(data_dir) -> dict[str, Split]:
    data_dir = Path(data_dir)
    return {
        layer: Split(read_split(data_dir / SPLIT_FILES[(layer, "train")]),
                     read_split(data_dir / SPLIT_FILES[(layer, "test")]))
        for layer in ("anomaly", "misuse")
    }
