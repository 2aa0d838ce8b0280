"""Small argument sets that exercise every command in a few seconds."""

import json
from pathlib import Path

BASE = ["--model", "lrp", "--s", "5", "--L", "12", "--ell-max", "6", "--seed", "3"]

CASES = {
    "env": [],
    "moments": ["--m-list", "4,6"],
    "walk": ["--t", "1", "--n", "2", "--N", "3000"],
    "kernel": ["--t", "0.5,1", "--ondiag", "1,4,9"],
    "corrector": [],
    "wphi": ["--r", "2", "--R", "9", "--trials", "3", "--dt", "1"],
    "maximal": ["--n", "4"],
    "holder": ["--R", "8", "--base", "2"],
    "sobolev": ["--R", "6", "--trials", "6"],
    "poincare": ["--R", "6", "--trials", "6"],
    "llt": ["--n", "2,4", "--R", "1", "--t1", "0.5", "--t2", "1", "--x-step", "0.125", "--long-format", "true"],
}

# audit-all needs a bigger box; the YAML config keeps each audit small
AUDIT_ALL_ARGS = ["--model", "lrp", "--L", "24", "--ell-max", "6", "--seed", "3"]
AUDIT_ALL_CONFIG = """\
wphi: {trials: 2, r: 2, R: 9, dt: 1}
maximal: {n: 4}
holder: {R: 8, base: 2}
sobolev: {trials: 4, R: 6}
poincare: {trials: 4, R: 6}
kernel: {ondiag: [1, 4]}
"""


def argv(command, out, extra=()):
    if command == "audit-all":
        cfg = Path(out).parent / (Path(out).name + ".yaml")
        cfg.write_text(AUDIT_ALL_CONFIG)
        return ["audit-all", *AUDIT_ALL_ARGS, "--config", str(cfg), "--out", str(out), *extra]
    return [command, *BASE, *CASES[command], "--out", str(out), *extra]


def artifacts(out):
    """Relative path -> bytes for every file except the manifest."""
    out = Path(out)
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def stable_manifest(out):
    m = json.loads((Path(out) / "manifest.json").read_text())
    m.pop("volatile")
    return m
