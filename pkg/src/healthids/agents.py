"""Discrete-time simulation of the healthcare agents with IDS-screened messaging.

Every tick all agents step in a fixed order (patients, ambient zones, nurses,
physicians); what they send is screened and delivered at the start of the next
tick. Each message carries an NSL-KDD-style record standing in for its network
footprint, and the destination agent's IDS layer decides whether it gets through.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import yaml

from .ids import DEFAULT_ASSIGNMENT, LAYERS, LayeredIDS, Verdict, check_assignment
from .nslkdd import ATTACK_CATALOG, NORMAL, TrafficRecord

TRACE_VERSION = 1


class AgentKind(str, Enum):
    PATIENT = "patient"
    NURSE = "nurse"
    PHYSICIAN = "physician"
    AMBIENT = "ambient"
    DATABASE = "database"


class MessageKind(str, Enum):
    IDENTITY_STORE = "IdentityStore"
    HEALTH_ALERT = "HealthAlert"
    PATIENT_REQUEST = "PatientRequest"
    AMBIENT_ALERT = "AmbientAlert"
    ACTIVITY_REPORT = "ActivityReport"
    REPORT_STORE = "ReportStore"
    TREAT_REQUEST = "TreatRequest"
    STATUS_REQUEST = "StatusRequest"
    STATUS_RESPONSE = "StatusResponse"


# interactions 1-9, in order
PROTOCOL: Mapping[MessageKind, tuple[AgentKind, AgentKind]] = {
    MessageKind.IDENTITY_STORE: (AgentKind.PATIENT, AgentKind.DATABASE),
    MessageKind.HEALTH_ALERT: (AgentKind.PATIENT, AgentKind.NURSE),
    MessageKind.PATIENT_REQUEST: (AgentKind.PATIENT, AgentKind.NURSE),
    MessageKind.AMBIENT_ALERT: (AgentKind.AMBIENT, AgentKind.NURSE),
    MessageKind.ACTIVITY_REPORT: (AgentKind.NURSE, AgentKind.PHYSICIAN),
    MessageKind.REPORT_STORE: (AgentKind.NURSE, AgentKind.DATABASE),
    MessageKind.TREAT_REQUEST: (AgentKind.PHYSICIAN, AgentKind.NURSE),
    MessageKind.STATUS_REQUEST: (AgentKind.PHYSICIAN, AgentKind.PATIENT),
    MessageKind.STATUS_RESPONSE: (AgentKind.PATIENT, AgentKind.PHYSICIAN),
}
_ALERTS = (MessageKind.HEALTH_ALERT, MessageKind.AMBIENT_ALERT, MessageKind.TREAT_REQUEST)


class AgentRef(NamedTuple):
    kind: AgentKind
    index: int

    def __str__(self):
        return f"{self.kind.value}-{self.index}"


DATABASE = AgentRef(AgentKind.DATABASE, 0)


@dataclass(frozen=True)
class VitalSigns:
    systolic: float
    diastolic: float
    heart_rate: float
    temperature: float
    location: str
    in_bed: bool
    timestamp: int

    def payload(self) -> dict:
        return {"systolic": round(self.systolic, 1), "diastolic": round(self.diastolic, 1),
                "heart_rate": round(self.heart_rate, 1), "temperature": round(self.temperature, 2),
                "location": self.location, "in_bed": self.in_bed}


@dataclass(frozen=True)
class AmbientReading:
    smoke_detected: bool
    ambient_temperature: float
    zone: int
    timestamp: int


@dataclass(frozen=True)
class AgentMessage:
    msg_id: int
    sender: AgentRef
    recipient: AgentRef
    kind: MessageKind
    payload: dict
    record: TrafficRecord
    traffic: str  # "normal" or the injected attack name
    timestamp: int

    def __post_init__(self):
        want = PROTOCOL[self.kind]
        if (self.sender.kind, self.recipient.kind) != want:
            raise ValueError(f"{self.kind.value} must go {want[0].value}->{want[1].value}, "
                             f"got {self.sender}->{self.recipient}")


@dataclass
class VitalsThresholds:
    systolic_high: float = 180.0
    systolic_low: float = 90.0
    heart_rate_high: float = 120.0
    heart_rate_low: float = 50.0
    temperature_high: float = 38.5
    temperature_low: float = 35.0


# hard physiological limits every generated reading is clamped to
_LIMITS = {"systolic": (50.0, 260.0), "diastolic": (30.0, 160.0),
           "heart_rate": (25.0, 220.0), "temperature": (32.0, 43.0)}
_NOISE_SD = {"systolic": 5.0, "diastolic": 3.0, "heart_rate": 4.0, "temperature": 0.15}


@dataclass
class SimConfig:
    patient_count: int = 1000
    tick_count: int = 100
    seed: int = 42
    nurse_count: int = 10
    physician_count: int = 5
    zone_count: int = 10
    noise_scale: float = 1.0
    abnormal_fraction: float = 0.02
    patient_request_prob: float = 0.01
    physician_request_prob: float = 0.3
    treat_fraction: float = 0.5
    smoke_prob: float = 0.002
    fire_prob: float = 0.002
    ambient_temperature_threshold: float = 40.0
    thresholds: VitalsThresholds = field(default_factory=VitalsThresholds)
    injection_rate: float = 0.0
    attack_mix: dict[str, float] = field(default_factory=lambda: {a: 1.0 for a in sorted(ATTACK_CATALOG)})
    assignment: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ASSIGNMENT))

    def __post_init__(self):
        if isinstance(self.thresholds, Mapping):
            self.thresholds = VitalsThresholds(**self.thresholds)
        if self.patient_count < 1:
            raise ValueError("patient_count must be >= 1")
        if self.tick_count < 0:
            raise ValueError("tick_count must be >= 0")
        for name in ("nurse_count", "physician_count", "zone_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("injection_rate", "abnormal_fraction", "patient_request_prob",
                     "physician_request_prob", "treat_fraction", "smoke_prob", "fire_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        unknown = set(self.attack_mix) - set(ATTACK_CATALOG)
        if unknown:
            raise ValueError(f"attack_mix names unknown attacks: {sorted(unknown)}")
        if self.injection_rate > 0 and not sum(self.attack_mix.values()) > 0:
            raise ValueError("attack_mix weights must sum to a positive value")
        self.assignment = check_assignment(self.assignment)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "thresholds" in data:
            tnames = {f.name for f in dataclasses.fields(VitalsThresholds)}
            bad = set(data["thresholds"]) - tnames
            if bad:
                raise ValueError(f"unknown threshold keys: {sorted(bad)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> SimConfig:
    """Read a YAML (or JSON) config file; unlisted keys keep their defaults."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, Mapping):
        raise ValueError(f"{path}: config must be a mapping")
    return SimConfig.from_mapping(data)


# --- agents -----------------------------------------------------------------------


@dataclass(frozen=True)
class PatientProfile:
    patient_id: int
    systolic: float
    diastolic: float
    heart_rate: float
    temperature: float
    zone: int
    bed: int

    @property
    def location(self) -> str:
        return f"ward-{self.zone}/bed-{self.bed}"


def make_profiles(rng: np.random.Generator, config: SimConfig) -> list[PatientProfile]:
    out = []
    for pid in range(config.patient_count):
        zone = pid % config.zone_count
        out.append(PatientProfile(
            pid,
            systolic=float(rng.uniform(105, 140)),
            diastolic=float(rng.uniform(65, 88)),
            heart_rate=float(rng.uniform(60, 95)),
            temperature=float(rng.uniform(36.3, 37.3)),
            zone=zone,
            bed=pid // config.zone_count,
        ))
    return out


def vitals_abnormal(v: VitalSigns, t: VitalsThresholds) -> bool:
    return (v.systolic > t.systolic_high or v.systolic < t.systolic_low
            or v.heart_rate > t.heart_rate_high or v.heart_rate < t.heart_rate_low
            or v.temperature > t.temperature_high or v.temperature < t.temperature_low)


def generate_vitals(rng: np.random.Generator, profile: PatientProfile, config: SimConfig, timestamp: int = 0) -> VitalSigns:
    """Baseline plus gaussian noise; with ``abnormal_fraction`` one vital is pushed past its threshold."""
    s = config.noise_scale
    values = {
        "systolic": profile.systolic + s * _NOISE_SD["systolic"] * rng.standard_normal(),
        "diastolic": profile.diastolic + s * _NOISE_SD["diastolic"] * rng.standard_normal(),
        "heart_rate": profile.heart_rate + s * _NOISE_SD["heart_rate"] * rng.standard_normal(),
        "temperature": profile.temperature + s * _NOISE_SD["temperature"] * rng.standard_normal(),
    }
    if config.abnormal_fraction > 0 and rng.random() < config.abnormal_fraction:
        t = config.thresholds
        which = int(rng.integers(6))
        excess = float(rng.uniform(0.05, 1.0))
        if which == 0:
            values["systolic"] = t.systolic_high + 1 + 30 * excess
        elif which == 1:
            values["systolic"] = t.systolic_low - 1 - 20 * excess
        elif which == 2:
            values["heart_rate"] = t.heart_rate_high + 1 + 40 * excess
        elif which == 3:
            values["heart_rate"] = t.heart_rate_low - 1 - 15 * excess
        elif which == 4:
            values["temperature"] = t.temperature_high + 0.1 + 1.5 * excess
        else:
            values["temperature"] = t.temperature_low - 0.1 - 1.5 * excess
    for k, (lo, hi) in _LIMITS.items():
        values[k] = float(min(max(values[k], lo), hi))
    in_bed = bool(rng.random() < 0.8) if s > 0 else True
    return VitalSigns(values["systolic"], values["diastolic"], values["heart_rate"],
                      values["temperature"], profile.location, in_bed, timestamp)


def generate_ambient(rng: np.random.Generator, zone: int, config: SimConfig, timestamp: int) -> AmbientReading:
    smoke = bool(rng.random() < config.smoke_prob)
    temp = float(22.0 + config.noise_scale * rng.standard_normal())
    if rng.random() < config.fire_prob:
        temp = config.ambient_temperature_threshold + float(rng.uniform(1, 20))
    return AmbientReading(smoke, temp, zone, timestamp)


class Outbox:
    """Builds outgoing messages: ids, timestamps and the attached traffic record."""

    def __init__(self, rng: np.random.Generator, benign: Sequence[TrafficRecord],
                 attacks: Mapping[str, Sequence[TrafficRecord]], config: SimConfig):
        self.rng = rng
        self.benign = benign
        self.attacks = attacks
        self.injection_rate = config.injection_rate
        names = [a for a in sorted(config.attack_mix) if config.attack_mix[a] > 0 and attacks.get(a)]
        if self.injection_rate > 0 and not names:
            raise ValueError("attack injection requested but no attack records are available for the mix")
        w = np.array([config.attack_mix[a] for a in names], dtype=float)
        self.attack_names = names
        self.attack_weights = w / w.sum() if len(w) else w
        self.next_id = 0
        self.tick = 0

    def _traffic(self) -> tuple[str, TrafficRecord]:
        if self.injection_rate > 0 and self.rng.random() < self.injection_rate:
            name = self.attack_names[int(self.rng.choice(len(self.attack_names), p=self.attack_weights))]
            pool = self.attacks[name]
            return name, pool[int(self.rng.integers(len(pool)))]
        return NORMAL, self.benign[int(self.rng.integers(len(self.benign)))]

    def send(self, sender: AgentRef, recipient: AgentRef, kind: MessageKind, payload: dict) -> AgentMessage:
        traffic, record = self._traffic()
        msg = AgentMessage(self.next_id, sender, recipient, kind, payload, record, traffic, self.tick)
        self.next_id += 1
        return msg


@dataclass
class PatientState:
    profile: PatientProfile
    nurse: AgentRef
    registered: bool = False
    last_vitals: VitalSigns | None = None

    @property
    def ref(self) -> AgentRef:
        return AgentRef(AgentKind.PATIENT, self.profile.patient_id)


@dataclass
class AmbientState:
    zone: int
    nurse: AgentRef

    @property
    def ref(self) -> AgentRef:
        return AgentRef(AgentKind.AMBIENT, self.zone)


@dataclass
class NurseState:
    index: int
    physician: AgentRef
    queue: list = field(default_factory=list)
    handled: int = 0
    requests_seen: int = 0

    @property
    def ref(self) -> AgentRef:
        return AgentRef(AgentKind.NURSE, self.index)


@dataclass
class PhysicianState:
    index: int
    reports_received: int = 0
    responses_received: int = 0

    @property
    def ref(self) -> AgentRef:
        return AgentRef(AgentKind.PHYSICIAN, self.index)


@dataclass
class DatabaseState:
    identities: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)


def patient_step(state: PatientState, vitals: VitalSigns, outbox: Outbox, config: SimConfig,
                 rng: np.random.Generator | None = None, inbound: Sequence[AgentMessage] = ()) -> list[AgentMessage]:
    out = []
    state.last_vitals = vitals
    if not state.registered:
        p = state.profile
        out.append(outbox.send(state.ref, DATABASE, MessageKind.IDENTITY_STORE,
                               {"patient_id": p.patient_id, "location": p.location, "admitted_tick": vitals.timestamp}))
        state.registered = True
    if vitals_abnormal(vitals, config.thresholds):
        out.append(outbox.send(state.ref, state.nurse, MessageKind.HEALTH_ALERT, vitals.payload()))
    if rng is not None and config.patient_request_prob > 0 and rng.random() < config.patient_request_prob:
        out.append(outbox.send(state.ref, state.nurse, MessageKind.PATIENT_REQUEST, {"request": "assistance"}))
    for msg in inbound:
        if msg.kind is MessageKind.STATUS_REQUEST:
            body = {"request_id": msg.msg_id, **vitals.payload()}
            out.append(outbox.send(state.ref, msg.sender, MessageKind.STATUS_RESPONSE, body))
    return out


def ambient_step(state: AmbientState, reading: AmbientReading, outbox: Outbox, config: SimConfig) -> list[AgentMessage]:
    if reading.smoke_detected or reading.ambient_temperature > config.ambient_temperature_threshold:
        payload = {"zone": reading.zone, "smoke": reading.smoke_detected,
                   "temperature": round(reading.ambient_temperature, 2)}
        return [outbox.send(state.ref, state.nurse, MessageKind.AMBIENT_ALERT, payload)]
    return []


def nurse_step(state: NurseState, inbound: Sequence[AgentMessage], outbox: Outbox) -> list[AgentMessage]:
    """Handle queued alerts and treat requests: one activity report and one stored report each."""
    for msg in inbound:
        if msg.kind in _ALERTS:
            state.queue.append(msg)
        elif msg.kind is MessageKind.PATIENT_REQUEST:
            state.requests_seen += 1
    out = []
    while state.queue:
        msg = state.queue.pop(0)
        report = {"handled": msg.msg_id, "cause": msg.kind.value, "nurse": state.index}
        out.append(outbox.send(state.ref, state.physician, MessageKind.ACTIVITY_REPORT, report))
        out.append(outbox.send(state.ref, DATABASE, MessageKind.REPORT_STORE, report))
        state.handled += 1
    return out


def physician_step(state: PhysicianState, inbound: Sequence[AgentMessage], outbox: Outbox,
                   rng: np.random.Generator, config: SimConfig) -> list[AgentMessage]:
    for msg in inbound:
        if msg.kind is MessageKind.ACTIVITY_REPORT:
            state.reports_received += 1
        elif msg.kind is MessageKind.STATUS_RESPONSE:
            state.responses_received += 1
    if config.physician_request_prob <= 0 or not rng.random() < config.physician_request_prob:
        return []
    if rng.random() < config.treat_fraction:
        nurse = AgentRef(AgentKind.NURSE, int(rng.integers(config.nurse_count)))
        return [outbox.send(state.ref, nurse, MessageKind.TREAT_REQUEST, {"action": "treat"})]
    patient = AgentRef(AgentKind.PATIENT, int(rng.integers(config.patient_count)))
    return [outbox.send(state.ref, patient, MessageKind.STATUS_REQUEST, {"fields": "vitals"})]


# --- IDS gate and run loop ------------------------------------------------------------


class GateResult(NamedTuple):
    delivered: bool
    message: AgentMessage
    layer: str
    verdict: Verdict


def ids_gate(msg: AgentMessage, assignment: Mapping[str, str], ids: LayeredIDS,
             cache: dict | None = None) -> GateResult:
    """Screen ``msg`` with its recipient's layer: an Attack verdict blocks it."""
    layer = assignment[msg.recipient.kind.value]
    if layer not in LAYERS:
        raise KeyError(f"no model for layer {layer!r}")
    key = (layer, id(msg.record))
    verdict = cache.get(key) if cache is not None else None
    if verdict is None:
        verdict = ids.classify_record(layer, msg.record)
        if cache is not None:
            cache[key] = verdict
    return GateResult(not verdict.is_attack, msg, layer, verdict)


@dataclass
class SimTrace:
    config: dict
    events: list[dict] = field(default_factory=list)
    messages: list[AgentMessage] = field(default_factory=list)
    blocked: list[GateResult] = field(default_factory=list)

    @property
    def emitted(self) -> int:
        return len(self.messages)

    def counts(self) -> dict[str, dict[str, int]]:
        out = {layer: {"delivered": 0, "blocked": 0, "blocked_attack": 0, "blocked_benign": 0,
                       "missed_attack": 0} for layer in LAYERS}
        for e in self.events:
            c = out[e["layer"]]
            injected = e["traffic"] != NORMAL
            if e["status"] == "blocked":
                c["blocked"] += 1
                c["blocked_attack" if injected else "blocked_benign"] += 1
            else:
                c["delivered"] += 1
                if injected:
                    c["missed_attack"] += 1
        return out

    @property
    def delivered_count(self) -> int:
        return sum(1 for e in self.events if e["status"] == "delivered")

    @property
    def blocked_count(self) -> int:
        return sum(1 for e in self.events if e["status"] == "blocked")

    def header(self) -> dict:
        return {"type": "header", "version": TRACE_VERSION, "config": self.config}

    def lines(self) -> list[str]:
        out = [json.dumps(self.header(), sort_keys=True)]
        out.extend(json.dumps(e, sort_keys=True) for e in self.events)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, trace_path, summary_path=None) -> None:
        Path(trace_path).write_text("".join(line + "\n" for line in self.lines()))
        if summary_path is not None:
            rows = ["layer,delivered,blocked,blocked_attack,blocked_benign,missed_attack"]
            for layer, c in self.counts().items():
                rows.append(f"{layer},{c['delivered']},{c['blocked']},{c['blocked_attack']},"
                            f"{c['blocked_benign']},{c['missed_attack']}")
            Path(summary_path).write_text("\n".join(rows) + "\n")


def _event(res: GateResult, tick: int) -> dict:
    m = res.message
    e = {"type": "message", "tick": tick, "sent": m.timestamp, "msg_id": m.msg_id, "kind": m.kind.value,
         "from": str(m.sender), "to": str(m.recipient), "layer": res.layer, "traffic": m.traffic,
         "status": "delivered" if res.delivered else "blocked", "payload": m.payload}
    if not res.delivered:
        e["verdict"] = res.verdict.to_json(m.msg_id)
    return e


def run_simulation(config: SimConfig, ids: LayeredIDS, benign: Sequence[TrafficRecord],
                   attacks: Mapping[str, Sequence[TrafficRecord]]) -> SimTrace:
    """Run ``config.tick_count`` synchronous rounds.

    ``benign`` is the pool of normal records attached to ordinary messages;
    ``attacks`` maps attack names to the pools injected messages draw from.
    Messages still in flight after the last round are screened in a final
    delivery pass so that every emitted message is accounted for.
    """
    if not benign:
        raise ValueError("benign traffic pool is empty")
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    setup_rng, vitals_rng, ambient_rng, behaviour_rng, traffic_rng = (np.random.default_rng(s) for s in seeds)
    trace = SimTrace(config=config.to_dict())
    if config.tick_count == 0:
        return trace

    outbox = Outbox(traffic_rng, benign, attacks, config)
    physicians = [PhysicianState(i) for i in range(config.physician_count)]
    nurses = [NurseState(i, physicians[i % config.physician_count].ref) for i in range(config.nurse_count)]
    patients = [PatientState(p, AgentRef(AgentKind.NURSE, p.patient_id % config.nurse_count))
                for p in make_profiles(setup_rng, config)]
    zones = [AmbientState(z, AgentRef(AgentKind.NURSE, z % config.nurse_count)) for z in range(config.zone_count)]
    database = DatabaseState()
    cache: dict = {}
    pending: list[AgentMessage] = []

    def deliver(tick: int) -> dict[AgentRef, list[AgentMessage]]:
        inbox: dict[AgentRef, list[AgentMessage]] = defaultdict(list)
        for msg in sorted(pending, key=lambda m: (m.timestamp, m.msg_id)):
            res = ids_gate(msg, config.assignment, ids, cache)
            trace.events.append(_event(res, tick))
            if res.delivered:
                inbox[msg.recipient].append(msg)
            else:
                trace.blocked.append(res)
        pending.clear()
        return inbox

    for tick in range(config.tick_count):
        outbox.tick = tick
        inbox = deliver(tick)
        for msg in inbox.get(DATABASE, ()):
            if msg.kind is MessageKind.IDENTITY_STORE:
                database.identities[msg.payload["patient_id"]] = msg.payload
            else:
                database.reports.append(msg.payload)
        out: list[AgentMessage] = []
        for st in patients:
            vitals = generate_vitals(vitals_rng, st.profile, config, tick)
            out += patient_step(st, vitals, outbox, config, behaviour_rng, inbox.get(st.ref, ()))
        for st in zones:
            out += ambient_step(st, generate_ambient(ambient_rng, st.zone, config, tick), outbox, config)
        for st in nurses:
            out += nurse_step(st, inbox.get(st.ref, ()), outbox)
        for st in physicians:
            out += physician_step(st, inbox.get(st.ref, ()), outbox, behaviour_rng, config)
        trace.messages.extend(out)
        pending.extend(out)
    deliver(config.tick_count)
    return trace
