"""Synthetic stand-in for the NSL-KDD files.

The public KDDTrain+/KDDTest+ files cannot be shipped with the package, so the
tests and the demo pipeline run on a generated corpus in the same line format.
Each class gets a hand-written feature profile loosely following the known
signatures (smurf: icmp echo replies of 520/1032 bytes, neptune: SYN floods with
S0 flags, teardrop: fragmented udp, U2R: long interactive sessions with root
shells, ...). The numbers here are not measurements and say nothing about how a
detector behaves on the real data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .nslkdd import FEATURE_NAMES, TrafficRecord, format_record

# Rare-class counts equal the real files so the built splits exercise the same
# "take everything" path; the frequent classes are scaled down.
TRAIN_COUNTS = {
    "normal": 6000, "neptune": 1200, "smurf": 800, "back": 400, "teardrop": 400,
    "pod": 201, "buffer_overflow": 30, "loadmodule": 9, "perl": 3, "land": 18,
    "rootkit": 10, "ipsweep": 120, "satan": 120, "guess_passwd": 20,
}
TEST_COUNTS = {
    "normal": 5000, "neptune": 450, "smurf": 400, "back": 359, "teardrop": 12,
    "pod": 41, "buffer_overflow": 20, "loadmodule": 2, "perl": 2, "land": 7,
    "rootkit": 13, "ipsweep": 60, "guess_passwd": 60,
}

_NORMAL_TCP = ["http", "smtp", "ftp_data", "ftp", "telnet", "finger", "auth", "pop_3", "imap4", "ssh", "other"]
_NORMAL_UDP = ["domain_u", "private", "ntp_u", "other"]
_NORMAL_ICMP = ["ecr_i", "eco_i", "urp_i", "tim_i"]
_SCAN_SERVICES = ["private", "other", "http", "telnet", "ftp", "smtp", "finger", "domain", "link", "uucp",
                  "courier", "bgp", "whois", "supdup", "csnet_ns", "iso_tsap", "ctf", "discard", "echo",
                  "systat", "netstat", "daytime", "vmnet", "sunrpc", "nnsp", "klogin", "kshell"]
# never drawn for the train file; shows up in test to exercise unseen-category encoding
_TEST_ONLY_SERVICES = ["tftp_u", "http_2784"]

def _rate(rng, lo, hi):
    return float(np.round(rng.uniform(lo, hi), 2))


def _base(_rng) -> dict:
    return {n: 0 for n in FEATURE_NAMES}


def _normal(rng, test: bool) -> dict:
    u = rng.random()
    if u < 0.02:
        # legitimate admin sessions that look like privilege escalation
        return _u2r(rng, "rootkit")
    if u < 0.04:
        f = _smurf(rng, test)
        f["count"] = int(rng.integers(1, 400))
        f["srv_count"] = f["count"]
        return f
    f = _base(rng)
    u = rng.random()
    if u < 0.80:
        f["protocol_type"] = "tcp"
        svc = _NORMAL_TCP
        f["flag"] = rng.choice(["SF"] * 18 + ["REJ", "RSTO", "S1"])
        f["logged_in"] = int(rng.random() < 0.85)
    elif u < 0.93:
        f["protocol_type"] = "udp"
        svc = _NORMAL_UDP
        f["flag"] = "SF"
    else:
        f["protocol_type"] = "icmp"
        svc = _NORMAL_ICMP
        f["flag"] = "SF"
    f["service"] = str(rng.choice(svc))
    if test and rng.random() < 0.01:
        f["service"] = str(rng.choice(_TEST_ONLY_SERVICES))
    f["duration"] = int(rng.exponential(30)) if rng.random() < 0.15 else 0
    f["src_bytes"] = int(rng.lognormal(5.5, 1.3))
    f["dst_bytes"] = int(rng.lognormal(7.0, 1.8)) if f["protocol_type"] == "tcp" else int(rng.lognormal(4.0, 1.0))
    f["hot"] = int(rng.random() < 0.05) * int(rng.integers(1, 4))
    f["num_failed_logins"] = int(rng.random() < 0.003)
    f["num_compromised"] = int(rng.random() < 0.01)
    f["num_file_creations"] = int(rng.random() < 0.01)
    f["num_access_files"] = int(rng.random() < 0.01)
    f["is_guest_login"] = int(rng.random() < 0.01)
    f["count"] = int(rng.integers(1, 30))
    f["srv_count"] = int(rng.integers(1, f["count"] + 5))
    rej = f["flag"] in ("REJ", "RSTO")
    f["serror_rate"] = _rate(rng, 0, 0.05)
    f["srv_serror_rate"] = _rate(rng, 0, 0.05)
    f["rerror_rate"] = _rate(rng, 0.5, 1.0) if rej else _rate(rng, 0, 0.05)
    f["srv_rerror_rate"] = f["rerror_rate"]
    f["same_srv_rate"] = _rate(rng, 0.8, 1.0)
    f["diff_srv_rate"] = _rate(rng, 0, 0.1)
    f["srv_diff_host_rate"] = _rate(rng, 0, 0.3)
    f["dst_host_count"] = int(rng.integers(1, 256))
    f["dst_host_srv_count"] = int(rng.integers(10, 256))
    f["dst_host_same_srv_rate"] = _rate(rng, 0.6, 1.0)
    f["dst_host_diff_srv_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_same_src_port_rate"] = _rate(rng, 0, 0.3)
    f["dst_host_srv_diff_host_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_serror_rate"] = _rate(rng, 0, 0.03)
    f["dst_host_srv_serror_rate"] = _rate(rng, 0, 0.02)
    f["dst_host_rerror_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_srv_rerror_rate"] = _rate(rng, 0, 0.1)
    return f


def _neptune(rng, test):
    f = _base(rng)
    f.update(protocol_type="tcp", service=str(rng.choice(_SCAN_SERVICES)),
             flag=str(rng.choice(["S0"] * 9 + ["REJ"])))
    s0 = f["flag"] == "S0"
    f["count"] = int(rng.integers(80, 512))
    f["srv_count"] = int(rng.integers(1, 30))
    f["serror_rate"] = 1.0 if s0 else 0.0
    f["srv_serror_rate"] = 1.0 if s0 else 0.0
    f["rerror_rate"] = 0.0 if s0 else 1.0
    f["srv_rerror_rate"] = f["rerror_rate"]
    f["same_srv_rate"] = _rate(rng, 0, 0.15)
    f["diff_srv_rate"] = _rate(rng, 0.03, 0.1)
    f["dst_host_count"] = 255
    f["dst_host_srv_count"] = int(rng.integers(1, 30))
    f["dst_host_same_srv_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_diff_srv_rate"] = _rate(rng, 0.03, 0.1)
    f["dst_host_serror_rate"] = 1.0 if s0 else 0.0
    f["dst_host_srv_serror_rate"] = 1.0 if s0 else 0.0
    f["dst_host_rerror_rate"] = 0.0 if s0 else 1.0
    f["dst_host_srv_rerror_rate"] = f["dst_host_rerror_rate"]
    return f


def _smurf(rng, test):
    f = _base(rng)
    f.update(protocol_type="icmp", service="ecr_i", flag="SF")
    f["src_bytes"] = int(rng.choice([520, 1032, 1032]))
    f["count"] = int(rng.integers(300, 512))
    f["srv_count"] = f["count"]
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = 255
    f["dst_host_srv_count"] = 255
    f["dst_host_same_srv_rate"] = 1.0
    f["dst_host_same_src_port_rate"] = 1.0
    return f


def _back(rng, test):
    f = _base(rng)
    f.update(protocol_type="tcp", service="http", flag=str(rng.choice(["SF"] * 5 + ["RSTR"])))
    f["src_bytes"] = 54540
    f["dst_bytes"] = int(rng.choice([8314, 7300, 0]))
    f["hot"] = 2
    f["logged_in"] = 1
    f["num_compromised"] = 1
    f["count"] = int(rng.integers(1, 15))
    f["srv_count"] = f["count"]
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 256))
    f["dst_host_srv_count"] = int(rng.integers(1, 256))
    f["dst_host_same_srv_rate"] = 1.0
    f["dst_host_same_src_port_rate"] = _rate(rng, 0, 0.1)
    return f


def _teardrop(rng, test):
    f = _base(rng)
    f.update(protocol_type="udp", service="private", flag="SF")
    f["src_bytes"] = 28
    f["wrong_fragment"] = 3
    f["count"] = int(rng.integers(20, 140))
    f["srv_count"] = f["count"]
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(50, 256))
    f["dst_host_srv_count"] = int(rng.integers(20, 120))
    f["dst_host_same_srv_rate"] = _rate(rng, 0.3, 0.6)
    f["dst_host_diff_srv_rate"] = _rate(rng, 0.0, 0.05)
    f["dst_host_same_src_port_rate"] = _rate(rng, 0.2, 0.6)
    return f


def _pod(rng, test):
    f = _base(rng)
    f.update(protocol_type="icmp", service=str(rng.choice(["ecr_i", "tim_i"])), flag="SF")
    f["src_bytes"] = int(rng.choice([1480, 564]))
    f["wrong_fragment"] = 1
    f["count"] = int(rng.integers(1, 5))
    f["srv_count"] = f["count"]
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 256))
    f["dst_host_srv_count"] = int(rng.integers(1, 30))
    f["dst_host_same_srv_rate"] = 1.0
    f["dst_host_same_src_port_rate"] = 1.0
    return f


def _land(rng, test):
    f = _base(rng)
    f.update(protocol_type="tcp", service=str(rng.choice(["finger", "telnet", "http", "private", "echo"])),
             flag="S0")
    f["land"] = 1
    f["count"] = 1
    f["srv_count"] = 1
    f["serror_rate"] = 1.0
    f["srv_serror_rate"] = 1.0
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 200))
    f["dst_host_srv_count"] = int(rng.integers(1, 10))
    f["dst_host_same_srv_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_same_src_port_rate"] = _rate(rng, 0.5, 1.0)
    f["dst_host_serror_rate"] = _rate(rng, 0.5, 1.0)
    f["dst_host_srv_serror_rate"] = _rate(rng, 0.5, 1.0)
    return f


def _u2r(rng, kind: str):
    f = _base(rng)
    f.update(protocol_type="tcp", service=str(rng.choice(["telnet"] * 3 + ["ftp_data", "login"])), flag="SF")
    f["duration"] = int(rng.integers(20, 3000))
    f["src_bytes"] = int(rng.integers(200, 6000))
    f["dst_bytes"] = int(rng.integers(500, 20000))
    f["logged_in"] = 1
    f["hot"] = int(rng.integers(1, 6))
    f["root_shell"] = int(rng.random() < {"buffer_overflow": 0.8, "rootkit": 0.3, "loadmodule": 0.6, "perl": 0.9}[kind])
    f["num_file_creations"] = int(rng.integers(0, 4))
    f["num_compromised"] = int(rng.integers(0, 3))
    f["num_shells"] = int(rng.random() < 0.3)
    f["num_root"] = int(rng.integers(0, 5)) if kind == "perl" else int(rng.integers(0, 2))
    f["num_access_files"] = int(rng.random() < 0.3)
    f["count"] = int(rng.integers(1, 4))
    f["srv_count"] = f["count"]
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 60))
    f["dst_host_srv_count"] = int(rng.integers(1, 40))
    f["dst_host_same_srv_rate"] = _rate(rng, 0.1, 1.0)
    f["dst_host_diff_srv_rate"] = _rate(rng, 0, 0.1)
    f["dst_host_same_src_port_rate"] = _rate(rng, 0, 0.5)
    return f


def _ipsweep(rng, test):
    f = _base(rng)
    f.update(protocol_type="icmp", service="eco_i", flag="SF", src_bytes=8)
    f["count"] = int(rng.integers(1, 5))
    f["srv_count"] = int(rng.integers(1, 30))
    f["same_srv_rate"] = 1.0
    f["srv_diff_host_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 100))
    f["dst_host_srv_count"] = int(rng.integers(1, 100))
    f["dst_host_same_srv_rate"] = 1.0
    f["dst_host_same_src_port_rate"] = 1.0
    f["dst_host_srv_diff_host_rate"] = _rate(rng, 0.3, 1.0)
    return f


def _satan(rng, test):
    f = _neptune(rng, test)
    f["flag"] = "REJ"
    f["count"] = int(rng.integers(1, 50))
    f["dst_host_count"] = int(rng.integers(50, 256))
    return f


def _guess_passwd(rng, test):
    f = _base(rng)
    f.update(protocol_type="tcp", service="telnet", flag=str(rng.choice(["SF", "RSTO"])))
    f["src_bytes"] = int(rng.integers(100, 130))
    f["dst_bytes"] = int(rng.integers(100, 200))
    f["num_failed_logins"] = 1
    f["hot"] = 1
    f["count"] = 1
    f["srv_count"] = 1
    f["same_srv_rate"] = 1.0
    f["dst_host_count"] = int(rng.integers(1, 256))
    f["dst_host_srv_count"] = int(rng.integers(1, 256))
    f["dst_host_same_srv_rate"] = 1.0
    return f


_PROFILES = {
    "normal": _normal, "neptune": _neptune, "smurf": _smurf, "back": _back,
    "teardrop": _teardrop, "pod": _pod, "land": _land,
    "buffer_overflow": lambda rng, t: _u2r(rng, "buffer_overflow"),
    "rootkit": lambda rng, t: _u2r(rng, "rootkit"),
    "loadmodule": lambda rng, t: _u2r(rng, "loadmodule"),
    "perl": lambda rng, t: _u2r(rng, "perl"),
    "ipsweep": _ipsweep, "satan": _satan, "guess_passwd": _guess_passwd,
}


def generate_records(counts: dict[str, int], seed: int, *, test: bool = False) -> list[TrafficRecord]:
    """Generate ``counts[label]`` records per label, shuffled, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    labels = [lab for lab in sorted(counts) for _ in range(counts[lab])]
    rng.shuffle(labels)
    out = []
    for lab in labels:
        f = _PROFILES[lab](rng, test)
        feats = []
        for i, name in enumerate(FEATURE_NAMES):
            v = f[name]
            feats.append(v if isinstance(v, str) else float(v))
        out.append(TrafficRecord(tuple(feats), lab, int(rng.integers(1, 22))))
    return out


def write_corpus(out_dir, seed: int = 7) -> tuple[Path, Path]:
    """Write ``KDDTrain+.txt`` and ``KDDTest+.txt`` lookalikes into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, counts, offset, is_test in (("KDDTrain+.txt", TRAIN_COUNTS, 0, False),
                                          ("KDDTest+.txt", TEST_COUNTS, 1, True)):
        records = generate_records(counts, seed * 1000 + offset, test=is_test)
        p = out_dir / name
        p.write_text("".join(format_record(r) + "\n" for r in records))
        paths.append(p)
    return paths[0], paths[1]
