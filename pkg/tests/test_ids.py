import numpy as np
import pytest
from hypothesis import given, strategies as st

from healthids.ids import (
    ANOMALY, DEFAULT_ASSIGNMENT, HYBRID, LAYERS, MISUSE, Verdict, anomaly_classify, check_assignment,
    decision_unit, hybrid_classify, hybrid_verdicts, misuse_classify,
)
from healthids.nslkdd import ATTACK, ATTACK_CATALOG, NORMAL
from healthids.svm import BinaryModel, KernelSpec, MulticlassModel, model_to_dict

RBF = KernelSpec("rbf", 1.0)


def const_binary(bias, pair=(ATTACK, NORMAL)):
    return BinaryModel(np.zeros((0, 2)), np.zeros(0), bias, RBF, pair, 2, 1.0, np.zeros(0, dtype=int))


def const_misuse(winner):
    """Two-class misuse model that always predicts ``winner``."""
    other = NORMAL if winner != NORMAL else "teardrop"
    a, b = sorted((winner, other))
    bias = 1.0 if a == winner else -1.0
    return MulticlassModel((a, b), (const_binary(bias, (a, b)),), RBF, 2)


class ExplodingMisuse:
    def predict_labels(self, X):
        raise AssertionError("misuse layer must not run when anomaly says normal")


X0 = np.zeros(2)


# --- verdict type ---

def test_verdict_invariants():
    with pytest.raises(ValueError):
        Verdict(ANOMALY, "smurf")
    with pytest.raises(ValueError):
        Verdict(MISUSE, ATTACK)
    with pytest.raises(ValueError):
        Verdict(MISUSE, None, corrected=True)
    with pytest.raises(ValueError):
        Verdict("edge")
    assert Verdict(HYBRID, "pod").label == "pod"
    assert Verdict(ANOMALY).label == NORMAL


def test_verdict_json():
    assert Verdict(HYBRID, "smurf").to_json(7) == {"record_id": 7, "layer": "hybrid", "outcome": "attack",
                                                   "corrected": False, "attack_class": "smurf"}
    assert Verdict(HYBRID, None, True).to_json("r1") == {"record_id": "r1", "layer": "hybrid",
                                                         "outcome": "normal", "corrected": True}


def test_default_assignment():
    assert DEFAULT_ASSIGNMENT == {"patient": ANOMALY, "ambient": ANOMALY, "nurse": MISUSE,
                                  "physician": MISUSE, "database": HYBRID}
    assert check_assignment(DEFAULT_ASSIGNMENT) == dict(DEFAULT_ASSIGNMENT)
    with pytest.raises(ValueError):
        check_assignment({k: v for k, v in DEFAULT_ASSIGNMENT.items() if k != "nurse"})
    with pytest.raises(ValueError):
        check_assignment({**DEFAULT_ASSIGNMENT, "nurse": "firewall"})


# --- single layers ---

def test_anomaly_sign_rule():
    assert anomaly_classify(const_binary(0.7), X0) == Verdict(ANOMALY, ATTACK)
    assert anomaly_classify(const_binary(-0.7), X0) == Verdict(ANOMALY)


def test_anomaly_dimension_mismatch():
    with pytest.raises(ValueError):
        anomaly_classify(const_binary(0.7), np.zeros(3))


def test_misuse_mapping():
    assert misuse_classify(const_misuse("neptune"), X0) == Verdict(MISUSE, "neptune")
    assert misuse_classify(const_misuse(NORMAL), X0) == Verdict(MISUSE)


# --- decision unit ---

def truth_table():
    """All 12 distinct input situations and the expected output."""
    rows = [((Verdict(ANOMALY), Verdict(MISUSE, "pod")), Verdict(HYBRID))]
    rows.append(((Verdict(ANOMALY, ATTACK), Verdict(MISUSE)), Verdict(HYBRID, None, corrected=True)))
    for c in sorted(ATTACK_CATALOG):
        rows.append(((Verdict(ANOMALY, ATTACK), Verdict(MISUSE, c)), Verdict(HYBRID, c)))
    return rows


def test_truth_table_is_complete():
    rows = truth_table()
    assert len(rows) == 12
    for (a, m), want in rows:
        assert decision_unit(a, m) == want


def test_rule_one_ignores_misuse_output():
    for c in [None, *ATTACK_CATALOG]:
        assert decision_unit(Verdict(ANOMALY), Verdict(MISUSE, c)) == Verdict(HYBRID)


def test_decision_unit_rejects_wrong_layers():
    with pytest.raises(ValueError):
        decision_unit(Verdict(MISUSE), Verdict(MISUSE))
    with pytest.raises(ValueError):
        decision_unit(Verdict(ANOMALY), Verdict(HYBRID))


def test_examples():
    assert decision_unit(Verdict(ANOMALY), Verdict(MISUSE, "pod")) == Verdict(HYBRID)
    assert decision_unit(Verdict(ANOMALY, ATTACK), Verdict(MISUSE)).corrected
    assert decision_unit(Verdict(ANOMALY, ATTACK), Verdict(MISUSE, "smurf")) == Verdict(HYBRID, "smurf")


# --- hybrid ---

def test_hybrid_short_circuits():
    assert hybrid_classify(const_binary(-1.0), ExplodingMisuse(), X0) == Verdict(HYBRID)
    assert hybrid_verdicts(const_binary(-1.0), ExplodingMisuse(), np.zeros((4, 2))) == [Verdict(HYBRID)] * 4


def test_hybrid_rule_three():
    assert hybrid_classify(const_binary(1.0), const_misuse("teardrop"), X0) == Verdict(HYBRID, "teardrop")


@given(st.floats(-5, 5), st.sampled_from([NORMAL, *ATTACK_CATALOG]))
def test_hybrid_equals_decision_unit(bias, winner):
    a, m = const_binary(bias), const_misuse(winner)
    assert hybrid_classify(a, m, X0) == decision_unit(anomaly_classify(a, X0), misuse_classify(m, X0))


def test_lazy_and_eager_agree(trained, encoded):
    _, _, Xt, _ = encoded
    lazy = trained.classify_batch(HYBRID, Xt)
    eager = trained.classify_batch(HYBRID, Xt, lazy=False)
    assert lazy == eager


def test_batch_matches_single(trained, encoded):
    _, _, Xt, _ = encoded
    rows = np.random.default_rng(0).choice(len(Xt), 150, replace=False)
    for layer in LAYERS:
        batch = trained.classify_batch(layer, Xt[rows])
        assert batch == [trained.classify(layer, Xt[i]) for i in rows]


def test_dominance_and_fidelity(trained, encoded):
    _, _, Xt, _ = encoded
    a = trained.classify_batch(ANOMALY, Xt)
    m = trained.classify_batch(MISUSE, Xt)
    h = trained.classify_batch(HYBRID, Xt)
    for va, vm, vh in zip(a, m, h):
        if vh.is_attack:
            assert va.is_attack
            assert vm.attack == vh.attack
        assert vh.corrected == (va.is_attack and not vm.is_attack)


def test_classify_is_pure(trained, encoded):
    _, _, Xt, _ = encoded
    before = (model_to_dict(trained.anomaly), model_to_dict(trained.misuse))
    first = trained.classify_batch(HYBRID, Xt[:200])
    second = trained.classify_batch(HYBRID, Xt[:200])
    assert first == second
    assert (model_to_dict(trained.anomaly), model_to_dict(trained.misuse)) == before


def test_classify_record(trained, misuse_split):
    r = misuse_split.test[0]
    assert trained.classify_record(MISUSE, r) == trained.classify(MISUSE, trained.encode([r])[0])
    with pytest.raises(KeyError):
        trained.classify("edge", trained.encode([r])[0])


def test_smurf_records_mostly_flagged(trained, misuse_split):
    smurf = [r for r in misuse_split.test if r.label == "smurf"]
    verdicts = trained.classify_batch(ANOMALY, trained.encode(smurf))
    assert sum(v.is_attack for v in verdicts) >= 0.9 * len(smurf)
