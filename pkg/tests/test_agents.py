import json
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from healthids.agents import (
    DATABASE, PROTOCOL, AgentKind, AgentMessage, AgentRef, AmbientReading, AmbientState, MessageKind,
    NurseState, Outbox, PatientProfile, PatientState, PhysicianState, SimConfig, VitalsThresholds,
    ambient_step, generate_vitals, ids_gate, load_config, make_profiles, nurse_step, patient_step,
    physician_step, run_simulation, vitals_abnormal,
)
from healthids.ids import ANOMALY, HYBRID, MISUSE, Verdict
from healthids.nslkdd import NORMAL, filter_attacks

PROFILE = PatientProfile(0, systolic=120.0, diastolic=80.0, heart_rate=75.0, temperature=36.8, zone=0, bed=0)
NURSE = AgentRef(AgentKind.NURSE, 0)
PHYS = AgentRef(AgentKind.PHYSICIAN, 0)


@pytest.fixture(scope="module")
def pools(misuse_split):
    benign = [r for r in misuse_split.test if r.label == NORMAL]
    return benign, filter_attacks(misuse_split.test)


def outbox(pools, config=None, seed=0):
    benign, attacks = pools
    return Outbox(np.random.default_rng(seed), benign, attacks, config or SimConfig())


# --- config ---

def test_config_defaults():
    c = SimConfig()
    assert c.patient_count == 1000 and c.injection_rate == 0.0
    assert c.thresholds == VitalsThresholds(180, 90, 120, 50, 38.5, 35.0)
    assert c.assignment["database"] == HYBRID


@pytest.mark.parametrize("kw", [{"patient_count": 0}, {"injection_rate": 1.5}, {"injection_rate": -0.1},
                                {"attack_mix": {"ipsweep": 1.0}}, {"assignment": {"patient": ANOMALY}},
                                {"tick_count": -1}])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_config_unknown_key():
    with pytest.raises(ValueError, match="unknown config keys"):
        SimConfig.from_mapping({"patients": 10})
    with pytest.raises(ValueError, match="threshold"):
        SimConfig.from_mapping({"thresholds": {"fever": 39}})


def test_load_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("patient_count: 20\ntick_count: 3\nthresholds:\n  temperature_high: 38.0\n")
    c = load_config(p)
    assert c.patient_count == 20 and c.thresholds.temperature_high == 38.0
    assert c.thresholds.systolic_high == 180.0


# --- vitals ---

def test_zero_noise_gives_baseline():
    c = SimConfig(noise_scale=0.0, abnormal_fraction=0.0)
    v = generate_vitals(np.random.default_rng(1), PROFILE, c, 5)
    assert (v.systolic, v.diastolic, v.heart_rate, v.temperature) == (120.0, 80.0, 75.0, 36.8)
    assert v.timestamp == 5 and v.location == PROFILE.location


def test_same_seed_same_sequence():
    c = SimConfig()
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    a = [generate_vitals(r1, PROFILE, c, t) for t in range(50)]
    b = [generate_vitals(r2, PROFILE, c, t) for t in range(50)]
    assert a == b


def test_abnormal_fraction_binomial():
    c = SimConfig(abnormal_fraction=0.1)
    rng = np.random.default_rng(2024)
    n = sum(vitals_abnormal(generate_vitals(rng, PROFILE, c, t), c.thresholds) for t in range(10_000))
    assert 940 <= n <= 1060


def test_vitals_within_limits():
    c = SimConfig(abnormal_fraction=0.5, noise_scale=5.0)
    rng = np.random.default_rng(0)
    for t in range(2000):
        v = generate_vitals(rng, PROFILE, c, t)
        assert 50 <= v.systolic <= 260 and 30 <= v.diastolic <= 160
        assert 25 <= v.heart_rate <= 220 and 32 <= v.temperature <= 43


def test_profiles_deterministic():
    c = SimConfig(patient_count=30)
    assert make_profiles(np.random.default_rng(1), c) == make_profiles(np.random.default_rng(1), c)


# --- step functions ---

def baseline_vitals(**over):
    v = generate_vitals(np.random.default_rng(0), PROFILE, SimConfig(noise_scale=0.0, abnormal_fraction=0.0), 0)
    return replace(v, **over)


def test_patient_first_tick_identity_only(pools):
    st = PatientState(PROFILE, NURSE)
    out = patient_step(st, baseline_vitals(), outbox(pools), SimConfig())
    assert [m.kind for m in out] == [MessageKind.IDENTITY_STORE]
    assert out[0].recipient == DATABASE
    again = patient_step(st, baseline_vitals(), outbox(pools), SimConfig())
    assert again == []


def test_patient_fever_alert(pools):
    st = PatientState(PROFILE, NURSE, registered=True)
    out = patient_step(st, baseline_vitals(temperature=39.2), outbox(pools), SimConfig())
    assert [m.kind for m in out] == [MessageKind.HEALTH_ALERT]
    assert out[0].recipient == NURSE and out[0].payload["temperature"] == 39.2


def test_patient_answers_status_request(pools):
    ob = outbox(pools)
    req = ob.send(PHYS, AgentRef(AgentKind.PATIENT, 0), MessageKind.STATUS_REQUEST, {})
    st = PatientState(PROFILE, NURSE, registered=True)
    out = patient_step(st, baseline_vitals(), ob, SimConfig(), inbound=[req])
    assert len(out) == 1 and out[0].kind is MessageKind.STATUS_RESPONSE
    assert out[0].recipient == PHYS and out[0].payload["request_id"] == req.msg_id


def test_patient_request_probability(pools):
    st = PatientState(PROFILE, NURSE, registered=True)
    c = SimConfig(patient_request_prob=1.0)
    out = patient_step(st, baseline_vitals(), outbox(pools), c, np.random.default_rng(0))
    assert [m.kind for m in out] == [MessageKind.PATIENT_REQUEST]


@pytest.mark.parametrize("smoke,temp,n", [(False, 22.0, 0), (True, 22.0, 1), (False, 55.0, 1)])
def test_ambient(pools, smoke, temp, n):
    out = ambient_step(AmbientState(3, NURSE), AmbientReading(smoke, temp, 3, 0), outbox(pools), SimConfig())
    assert len(out) == n
    assert all(m.kind is MessageKind.AMBIENT_ALERT and m.recipient == NURSE for m in out)


def test_nurse_handles_alert(pools):
    ob = outbox(pools)
    alert = ob.send(AgentRef(AgentKind.PATIENT, 0), NURSE, MessageKind.HEALTH_ALERT, {})
    st = NurseState(0, PHYS)
    out = nurse_step(st, [alert], ob)
    assert Counter(m.kind for m in out) == {MessageKind.ACTIVITY_REPORT: 1, MessageKind.REPORT_STORE: 1}
    assert nurse_step(st, [], ob) == []
    assert st.handled == 1


def test_nurse_counts_patient_requests(pools):
    ob = outbox(pools)
    req = ob.send(AgentRef(AgentKind.PATIENT, 0), NURSE, MessageKind.PATIENT_REQUEST, {})
    st = NurseState(0, PHYS)
    assert nurse_step(st, [req], ob) == [] and st.requests_seen == 1


def test_physician_probabilities(pools):
    ob = outbox(pools)
    rng = np.random.default_rng(0)
    never = SimConfig(physician_request_prob=0.0)
    always = SimConfig(physician_request_prob=1.0)
    assert all(physician_step(PhysicianState(0), [], ob, rng, never) == [] for _ in range(50))
    outs = [physician_step(PhysicianState(0), [], ob, rng, always) for _ in range(50)]
    assert all(len(o) == 1 for o in outs)
    assert {o[0].kind for o in outs} == {MessageKind.TREAT_REQUEST, MessageKind.STATUS_REQUEST}


def test_protocol_enforced(misuse_split):
    r = misuse_split.test[0]
    with pytest.raises(ValueError):
        AgentMessage(0, NURSE, DATABASE, MessageKind.HEALTH_ALERT, {}, r, NORMAL, 0)
    assert len(PROTOCOL) == 9


# --- gate ---

def _msg(record, recipient, kind, sender):
    return AgentMessage(0, sender, recipient, kind, {}, record, record.label, 0)


def test_gate_examples(trained, misuse_split):
    X = trained.encode(misuse_split.test)
    a = trained.classify_batch(ANOMALY, X)
    m = trained.classify_batch(MISUSE, X)
    h = trained.classify_batch(HYBRID, X)
    recs = misuse_split.test
    smurf = next(r for r, v in zip(recs, h) if r.label == "smurf" and v.is_attack)
    res = ids_gate(_msg(smurf, DATABASE, MessageKind.REPORT_STORE, NURSE), SimConfig().assignment, trained)
    assert not res.delivered and res.verdict == Verdict(HYBRID, "smurf") and res.layer == HYBRID
    benign = next(r for r, v in zip(recs, a) if r.label == NORMAL and not v.is_attack)
    res = ids_gate(_msg(benign, AgentRef(AgentKind.PATIENT, 1), MessageKind.STATUS_REQUEST, PHYS),
                   SimConfig().assignment, trained)
    assert res.delivered and res.layer == ANOMALY
    benign = next(r for r, v in zip(recs, m) if r.label == NORMAL and not v.is_attack)
    res = ids_gate(_msg(benign, NURSE, MessageKind.TREAT_REQUEST, PHYS), SimConfig().assignment, trained)
    assert res.delivered and res.layer == MISUSE


# --- full runs ---

SMALL = dict(patient_count=60, tick_count=25, nurse_count=4, physician_count=2, zone_count=3,
             abnormal_fraction=0.05, smoke_prob=0.02, fire_prob=0.02, patient_request_prob=0.05)


@pytest.fixture(scope="module")
def injected(trained, pools):
    return run_simulation(SimConfig(**SMALL, injection_rate=0.2, seed=5), trained, *pools)


def test_zero_ticks_is_empty(trained, pools):
    t = run_simulation(SimConfig(tick_count=0), trained, *pools)
    assert t.events == [] and t.emitted == 0
    lines = t.lines()
    assert len(lines) == 1 and json.loads(lines[0])["type"] == "header"


def test_same_seed_same_digest(trained, pools, injected):
    again = run_simulation(SimConfig(**SMALL, injection_rate=0.2, seed=5), trained, *pools)
    assert again.digest() == injected.digest()
    other = run_simulation(SimConfig(**SMALL, injection_rate=0.2, seed=6), trained, *pools)
    assert other.digest() != injected.digest()


def test_conservation(injected):
    assert injected.emitted == injected.delivered_count + injected.blocked_count
    assert len(injected.events) == injected.emitted
    ids = [e["msg_id"] for e in injected.events]
    assert len(set(ids)) == len(ids) == len({m.msg_id for m in injected.messages})
    c = injected.counts()
    assert sum(v["delivered"] + v["blocked"] for v in c.values()) == injected.emitted


def test_protocol_conformance(injected):
    for e in injected.events:
        want = PROTOCOL[MessageKind(e["kind"])]
        assert (e["from"].split("-")[0], e["to"].split("-")[0]) == (want[0].value, want[1].value)
        assert e["tick"] == e["sent"] + 1


def test_gate_consistency(trained, injected):
    assert injected.blocked
    for res in injected.blocked:
        assert trained.classify_record(res.layer, res.message.record) == res.verdict


def test_database_blocks_injected_traffic(injected):
    assert injected.counts()[HYBRID]["blocked_attack"] > 0


def test_alert_causality(injected):
    delivered = {e["msg_id"]: e for e in injected.events if e["status"] == "delivered"}
    alerts = {"HealthAlert", "AmbientAlert", "TreatRequest"}
    for e in injected.events:
        if e["kind"] != "ActivityReport":
            continue
        cause = delivered[e["payload"]["handled"]]
        assert cause["kind"] in alerts
        assert cause["to"] == e["from"]
        assert cause["tick"] <= e["sent"]


def test_report_accounting(injected):
    last = injected.config["tick_count"]
    handled = sum(1 for e in injected.events if e["status"] == "delivered"
                  and e["kind"] in ("HealthAlert", "AmbientAlert", "TreatRequest") and e["tick"] < last)
    kinds = Counter(m.kind for m in injected.messages)
    assert kinds[MessageKind.REPORT_STORE] == handled == kinds[MessageKind.ACTIVITY_REPORT]


def test_status_request_response_pairing(injected):
    last = injected.config["tick_count"]
    requests = [e for e in injected.events if e["kind"] == "StatusRequest" and e["status"] == "delivered"
                and e["tick"] < last]
    answers = Counter(m.payload["request_id"] for m in injected.messages if m.kind is MessageKind.STATUS_RESPONSE)
    assert requests
    assert all(answers[e["msg_id"]] == 1 for e in requests)
    assert sum(answers.values()) == len(requests)


def test_no_injection_blocks_only_false_positives(trained, pools):
    t = run_simulation(SimConfig(**SMALL, seed=3), trained, *pools)
    assert all(e["traffic"] == NORMAL for e in t.events)
    by_id = {m.msg_id: m for m in t.messages}
    for layer, c in t.counts().items():
        screened = [by_id[e["msg_id"]] for e in t.events if e["layer"] == layer]
        fp = sum(trained.classify_record(layer, m.record).is_attack for m in screened)
        assert c["blocked"] == c["blocked_benign"] == fp


def test_trace_files(tmp_path, injected):
    injected.write(tmp_path / "t.ndjson", tmp_path / "s.csv")
    lines = (tmp_path / "t.ndjson").read_text().splitlines()
    assert json.loads(lines[0])["type"] == "header"
    assert len(lines) == injected.emitted + 1
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "layer,delivered,blocked,blocked_attack,blocked_benign,missed_attack"
    assert len(rows) == 4
