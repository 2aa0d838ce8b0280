"""Versioned environment files: JSON lines, or ``.npz`` with the same schema."""

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .model import Environment

FORMAT_VERSION = 1


def _meta_from_header(h):
    keys = ("model", "s", "xi_spec", "seed")
    meta = {k: h.get(k) for k in keys}
    meta.update(h.get("extra", {}))
    return meta


def _header(env):
    h = env.header()
    extra = {k: v for k, v in env.meta.items() if k not in ("model", "s", "xi_spec", "seed")}
    if extra:
        h["extra"] = extra
    return h


def dumps_jsonl(env):
    lines = [json.dumps(_header(env), sort_keys=True)]
    for x, y, c in env.edge_records():
        lines.append(json.dumps({"x": x.tolist(), "y": y.tolist(), "c": c}))
    return "\n".join(lines) + "\n"


def save_environment(env, path):
    """Write ``env`` to ``path``; the suffix picks the format (.npz or JSON lines)."""
    path = Path(path)
    if path.suffix == ".npz":
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.frombuffer(json.dumps(_header(env), sort_keys=True).encode(), dtype=np.uint8),
                x=env.coords[env.edge_i],
                y=env.coords[env.edge_j],
                c=env.edge_c,
            )
    else:
        path.write_text(dumps_jsonl(env))
    return path


def _build(h, x, y, c):
    if h.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported environment format_version {h.get('format_version')!r}")
    d, L, boundary, side = int(h["d"]), int(h["L"]), h["boundary"], int(h["side"])
    x = np.asarray(x, dtype=np.int64).reshape(-1, d)
    y = np.asarray(y, dtype=np.int64).reshape(-1, d)
    z = y - x
    if boundary == "torus":
        half = side // 2
        z = (z + half) % side - half
    return Environment.from_edges(d, L, boundary, x, z, c, side=side, ell_max=h["ell_max"], meta=_meta_from_header(h))


def load_environment(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            h = json.loads(bytes(data["header"]).decode())
            return _build(h, data["x"], data["y"], data["c"])
    with open(path) as fh:
        h = json.loads(fh.readline())
        xs, ys, cs = [], [], []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            xs.append(rec["x"])
            ys.append(rec["y"])
            cs.append(rec["c"])
    return _build(h, xs, ys, np.asarray(cs, dtype=np.float64))
