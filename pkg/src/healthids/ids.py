"""Anomaly, misuse and hybrid detection layers and the hybrid decision unit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .nslkdd import ATTACK, ATTACK_CATALOG, NORMAL, FeatureSchema, TrafficRecord, encode_matrix
from .svm import BinaryModel, MulticlassModel, decision_value, predict_multiclass

ANOMALY = "anomaly"
MISUSE = "misuse"
HYBRID = "hybrid"
LAYERS = (ANOMALY, MISUSE, HYBRID)

AGENT_KINDS = ("patient", "nurse", "physician", "ambient", "database")
DEFAULT_ASSIGNMENT: Mapping[str, str] = {
    "patient": ANOMALY,
    "ambient": ANOMALY,
    "nurse": MISUSE,
    "physician": MISUSE,
    "database": HYBRID,
}


def check_assignment(assignment: Mapping[str, str]) -> dict[str, str]:
    missing = set(AGENT_KINDS) - set(assignment)
    extra = set(assignment) - set(AGENT_KINDS)
    if missing or extra:
        raise ValueError(f"layer assignment must cover exactly {AGENT_KINDS}; missing={sorted(missing)} extra={sorted(extra)}")
    bad = {k: v for k, v in assignment.items() if v not in LAYERS}
    if bad:
        raise ValueError(f"unknown layers in assignment: {bad}")
    return dict(assignment)


@dataclass(frozen=True)
class Verdict:
    """``attack`` is None for Normal, otherwise the attack name."""

    layer: str
    attack: str | None = None
    corrected: bool = False

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}")
        if self.corrected and self.layer != HYBRID:
            raise ValueError("only hybrid verdicts can be corrected")
        if self.attack is not None:
            allowed = {ATTACK} if self.layer == ANOMALY else set(ATTACK_CATALOG)
            if self.attack not in allowed:
                raise ValueError(f"{self.layer} verdict cannot name attack {self.attack!r}")

    @property
    def is_attack(self) -> bool:
        return self.attack is not None

    @property
    def label(self) -> str:
        return self.attack or NORMAL

    def to_json(self, record_id=None) -> dict:
        out = {"record_id": record_id, "layer": self.layer,
               "outcome": "attack" if self.is_attack else "normal", "corrected": self.corrected}
        if self.is_attack:
            out["attack_class"] = self.attack
        return out


NORMAL_HYBRID = Verdict(HYBRID)


def _anomaly_from_label(label: str) -> Verdict:
    return Verdict(ANOMALY, None if label == NORMAL else ATTACK)


def _misuse_from_label(label: str) -> Verdict:
    return Verdict(MISUSE, None if label == NORMAL else label)


def anomaly_classify(model: BinaryModel, x) -> Verdict:
    dv = decision_value(model, x)
    return _anomaly_from_label(model.class_pair[0] if dv >= 0 else model.class_pair[1])


def misuse_classify(model: MulticlassModel, x) -> Verdict:
    return _misuse_from_label(predict_multiclass(model, x))


def decision_unit(anomaly_out: Verdict, misuse_out: Verdict) -> Verdict:
    """Combine the two layer verdicts.

    anomaly Normal                    -> Normal
    anomaly Attack, misuse Normal     -> Normal, flagged as a corrected misclassification
    anomaly Attack, misuse Attack(c)  -> Attack(c)
    """
    if anomaly_out.layer != ANOMALY or misuse_out.layer != MISUSE:
        raise ValueError(f"decision unit expects (anomaly, misuse) verdicts, got ({anomaly_out.layer}, {misuse_out.layer})")
    if not anomaly_out.is_attack:
        return NORMAL_HYBRID
    if not misuse_out.is_attack:
        return Verdict(HYBRID, None, corrected=True)
    return Verdict(HYBRID, misuse_out.attack)


def hybrid_classify(anomaly_model: BinaryModel, misuse_model: MulticlassModel, x) -> Verdict:
    a = anomaly_classify(anomaly_model, x)
    if not a.is_attack:
        return NORMAL_HYBRID
    return decision_unit(a, misuse_classify(misuse_model, x))


# batch versions; row-for-row the same verdicts as the single-record functions up to
# floating-point summation order in the kernel products


def anomaly_verdicts(model: BinaryModel, X: np.ndarray) -> list[Verdict]:
    return [_anomaly_from_label(lab) for lab in model.predict_labels(X)]


def misuse_verdicts(model: MulticlassModel, X: np.ndarray) -> list[Verdict]:
    return [_misuse_from_label(lab) for lab in model.predict_labels(X)]


def hybrid_verdicts(anomaly_model: BinaryModel, misuse_model: MulticlassModel, X: np.ndarray,
                    *, lazy: bool = True) -> list[Verdict]:
    """Hybrid verdicts for a batch.

    With ``lazy`` the misuse layer only sees rows the anomaly layer flagged.
    Otherwise both layers run over every row, as a deployed hybrid IDS running
    its two detectors side by side would; the verdicts are identical.
    """
    X = np.atleast_2d(X)
    a = anomaly_verdicts(anomaly_model, X)
    if lazy:
        flagged = [n for n, v in enumerate(a) if v.is_attack]
        m = dict(zip(flagged, misuse_verdicts(misuse_model, X[flagged]) if flagged else []))
        return [decision_unit(v, m[n]) if v.is_attack else NORMAL_HYBRID for n, v in enumerate(a)]
    m = misuse_verdicts(misuse_model, X)
    return [decision_unit(va, vm) for va, vm in zip(a, m)]


@dataclass(frozen=True)
class LayeredIDS:
    """Feature schema plus the two trained models; the hybrid layer reuses both."""

    schema: FeatureSchema
    anomaly: BinaryModel
    misuse: MulticlassModel

    def encode(self, records: Sequence[TrafficRecord]) -> np.ndarray:
        return encode_matrix(records, self.schema)

    def classify(self, layer: str, x) -> Verdict:
        if layer == ANOMALY:
            return anomaly_classify(self.anomaly, x)
        if layer == MISUSE:
            return misuse_classify(self.misuse, x)
        if layer == HYBRID:
            return hybrid_classify(self.anomaly, self.misuse, x)
        raise KeyError(f"no model for layer {layer!r}")

    def classify_record(self, layer: str, record: TrafficRecord) -> Verdict:
        return self.classify(layer, self.encode([record])[0])

    def classify_batch(self, layer: str, X: np.ndarray, *, lazy: bool = True) -> list[Verdict]:
        if layer == ANOMALY:
            return anomaly_verdicts(self.anomaly, X)
        if layer == MISUSE:
            return misuse_verdicts(self.misuse, X)
        if layer == HYBRID:
            return hybrid_verdicts(self.anomaly, self.misuse, X, lazy=lazy)
        raise KeyError(f"no model for layer {layer!r}")
