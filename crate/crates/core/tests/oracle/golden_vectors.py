#!/usr/bin/env python3
"""Independent serializer for the canonical byte layout.

Writes tests/fixtures/golden.txt (name=hex lines) and
tests/fixtures/dump_10000.txt (a 10,000-sample sensor dump).
Run from crates/core: python3 tests/oracle/golden_vectors.py
"""
import hashlib
import random
import struct
from pathlib import Path

VERSION = b"\x01"


def u8(v):
    return struct.pack(">B", v)


def u32(v):
    return struct.pack(">I", v)


def u64(v):
    return struct.pack(">Q", v)


def i32(v):
    return struct.pack(">i", v)


def i64(v):
    return struct.pack(">q", v)


def blob(b):
    return u32(len(b)) + b


def string(s):
    return blob(s.encode("utf-8"))


def opt(v, enc):
    return b"\x00" if v is None else b"\x01" + enc(v)


def series_bytes(sensor_id, samples):
    out = string(sensor_id) + u32(len(samples))
    for ts, tenths in samples:
        out += u64(ts) + i32(tenths)
    return out


def param(value):
    kind, v = value
    if kind == "str":
        return u8(1) + string(v)
    if kind == "int":
        return u8(2) + i64(v)
    if kind == "dec":
        mantissa, scale = v
        return u8(3) + i64(mantissa) + u8(scale)
    if kind == "bytes":
        return u8(4) + blob(v)
    raise ValueError(kind)


def tx_bytes(tx):
    out = VERSION
    out += tx["tx_id"]
    out += u8(tx["process_type"])
    out += tx["actor_id"]
    out += u8(tx["role"])
    out += u32(len(tx["inputs"]))
    for lot in tx["inputs"]:
        out += string(lot)
    out += opt(tx.get("output"), string)
    out += opt(tx.get("note"), string)
    out += opt(tx.get("transport_ref"), lambda b: b)
    out += opt(tx.get("supersedes"), lambda b: b)
    out += opt(tx.get("series"), lambda s: series_bytes(*s))
    params = sorted(tx["params"].items(), key=lambda kv: kv[0].encode("utf-8"))
    out += u32(len(params))
    for k, v in params:
        out += string(k) + param(v)
    out += u64(tx["created_at"])
    return out


def header_bytes(height, prev_hash, timestamp, proposer, tx_hash):
    return VERSION + u64(height) + prev_hash + u64(timestamp) + proposer + tx_hash


def sha(b):
    return hashlib.sha256(b).digest()


def main():
    root = Path(__file__).resolve().parent.parent / "fixtures"
    production = {
        "tx_id": bytes(range(16)),
        "process_type": 2,
        "actor_id": bytes(range(0xA0, 0xA8)),
        "role": 1,
        "inputs": ["TOM-2023.A1", "SALT.7"],
        "output": "SAUCE-001",
        "supersedes": bytes([0xEE] * 16),
        "params": {
            "temp_setpoint": ("int", -18),
            "batch_weight_kg": ("dec", (12055, 1)),
            "line": ("str", "L2"),
            "qc_blob": ("bytes", b"\x00\x01\xff"),
            "Zone": ("str", "north"),
            "étape": ("str", "cuisson"),
        },
        "created_at": 1_700_000_123,
    }
    samples = [(1_700_000_000, 45), (1_700_000_060, -5), (1_700_000_120, 123)]
    series = ("NFC-01", samples)
    transport_end = {
        "tx_id": bytes(range(0x10, 0x20)),
        "process_type": 4,
        "actor_id": bytes(range(0xB0, 0xB8)),
        "role": 2,
        "inputs": ["SAUCE-001"],
        "transport_ref": bytes([0x33] * 16),
        "series": series,
        "params": {"sensor_digest": ("bytes", sha(series_bytes(*series)))},
        "created_at": 1_700_000_200,
    }
    prod = tx_bytes(production)
    te = tx_bytes(transport_end)
    header = header_bytes(42, sha(b"parent"), 1_700_000_300, bytes(range(0xC0, 0xC8)), sha(prod))
    lines = [
        ("production_tx", prod.hex()),
        ("production_tx_hash", sha(prod).hex()),
        ("transport_end_tx", te.hex()),
        ("transport_end_tx_hash", sha(te).hex()),
        ("header", header.hex()),
        ("block_hash", sha(header).hex()),
    ]
    (root / "golden.txt").write_text("".join(f"{k}={v}\n" for k, v in lines))

    rng = random.Random(20231)
    ts = 1_700_000_000
    out = ["biotrak-sensor,v1,NFC-LONG-01"]
    for _ in range(10_000):
        ts += rng.randint(1, 120)
        tenths = rng.randint(-1000, 1500)
        sign = "-" if tenths < 0 else ""
        out.append(f"{ts},{sign}{abs(tenths) // 10}.{abs(tenths) % 10}")
    (root / "dump_10000.txt").write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
