"""Command line front end: ``rcm-lab <command> [options]``.

Each command resolves its settings from built-in defaults, then an optional
YAML config file, then command-line flags (flags win). Every setting is
validated before any environment is generated or solver started. Outputs go
to ``--out``; each file is written to a temporary name and renamed into place,
and ``manifest.json`` lists them with their SHA-256 digests. Exit codes:
0 success, 2 invalid input, 3 solver failure, 4 box too small.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import hashlib
import json
import math
import os
from pathlib import Path
import platform
import sys
import time

import numpy as np
import yaml

from . import __version__
from . import plotting
from .corrector import diffusion_matrix, residual_certificate, solve_corrector, sublinearity_report
from .diagnostics import (
    DataSpec,
    caloric_from_delta,
    holder_report,
    maximal_report,
    poincare_audit,
    random_field,
    sobolev_audit,
    wphi_report,
    PROFILES,
)
from .environment import (
    ExponentSet,
    check_assumptions,
    constant_environment,
    gen_long_range_percolation,
    gen_polynomial_conductance,
    load_environment,
    moments,
    save_environment,
)
from .environment.io import dumps_jsonl
from .errors import RCMError, ValidationError
from .kernel import Cylinder, delta, evolve_at, killed_kernel, ondiag_check
from .llt import GaussianKernelParams, LLTGrid, convergence_study
from .rng import stream
from .walk import empirical_kernel, scaled_endpoint_samples

INF = math.inf


# ----------------------------------------------------------------------
# value parsing
def _float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "+inf"):
        return INF
    return float(v)


def _list(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, (int, float)):
            return [conv(v)]
        return [conv(x) for x in str(v).split(",") if x.strip()]

    parse.__name__ = f"list of {conv.__name__}"
    return parse


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _json_or_str(v):
    if isinstance(v, (dict, list)) or v is None:
        return v
    try:
        return json.loads(v)
    except (TypeError, json.JSONDecodeError):
        return v


@dataclass(frozen=True)
class Knob:
    name: str
    conv: object
    default: object
    help: str

    @property
    def flag(self):
        return "--" + self.name.replace("_", "-")


MODEL = [
    Knob("env", str, None, "environment file; skips generation when given"),
    Knob("model", str, "lrp", "lrp (long-range percolation), poly (polynomial conductances) or const"),
    Knob("d", int, 2, "dimension"),
    Knob("s", _float, 5.0, "decay exponent s"),
    Knob("L", int, 32, "half-width of the box (torus side 2L)"),
    Knob("boundary", str, "torus", "torus or box"),
    Knob("side", int, None, "torus side (default 2L)"),
    Knob("ell_max", _float, None, "jump cutoff"),
    Knob("xi", _json_or_str, None, "xi distribution for model poly, as JSON"),
]
EXPONENTS = [
    Knob("p", _float, 6.0, "integrability exponent of mu"),
    Knob("q", _float, 6.0, "integrability exponent of nu"),
    Knob("m", _float, 4.0, "moment order m"),
]

COMMANDS = {
    "env": [
        Knob("format", str, "jsonl", "jsonl or npz"),
    ],
    "moments": [
        Knob("m_list", _list(_float), [4.0], "orders m of mu_m"),
    ],
    "walk": [
        Knob("t", _float, 1.0, "rescaled time t"),
        Knob("n", int, 1, "diffusive scale n (walks run to n^2 t)"),
        Knob("N", int, 10000, "number of walks"),
        Knob("stream", int, 0, "base stream id"),
    ],
    "kernel": [
        Knob("t", _list(_float), [1.0], "times of the exported slices"),
        Knob("ondiag", _list(_float), [4.0, 9.0, 16.0, 36.0, 64.0], "time grid of the on-diagonal check"),
        Knob("factor", _float, 3.0, "allowed max/min ratio of the on-diagonal statistic"),
        Knob("tol", _float, 1e-12, "uniformization tolerance"),
    ],
    "corrector": [
        Knob("tol", _float, 1e-10, "relative residual"),
        Knob("max_iter", int, 20000, "CG iteration cap"),
        Knob("radii", _list(_float), None, "radii of the sublinearity report (default powers of 2)"),
    ],
    "wphi": [
        Knob("t0", _float, 0.0, "centre time"),
        Knob("r", _float, 4.0, "inner radius r"),
        Knob("R", _float, 20.0, "outer radius R"),
        Knob("trials", int, 20, "number of trials"),
        Knob("initial", str, "delta", "initial data: delta, constant or random"),
        Knob("value", _float, 1.0, "initial mass / level"),
        Knob("exterior_value", _float, 0.0, "frozen value outside B_R"),
        Knob("exterior_min_radius", _float, 0.0, "exterior value applies beyond this radius"),
        Knob("dt", _float, None, "time step (default r^2/16)"),
        Knob("tol", _float, 1e-12, "uniformization tolerance"),
    ],
    "maximal": [
        Knob("n", int, 8, "scale n"),
        Knob("theta", _float, 0.75, "theta"),
        Knob("theta_prime", _float, 0.5, "theta'"),
        Knob("kappa1", _float, 1.0, "exponent on the moment factor"),
        Knob("dt", _float, 1.0, "time step"),
        Knob("tol", _float, 1e-12, "uniformization tolerance"),
    ],
    "holder": [
        Knob("R", _float, 16.0, "outer radius R"),
        Knob("base", _float, 6.0, "shrink factor between levels"),
        Knob("dt", _float, None, "time step (default max(1/2, R^2/256))"),
        Knob("tol", _float, 1e-12, "uniformization tolerance"),
    ],
    "sobolev": [
        Knob("R", _float, 8.0, "ball radius"),
        Knob("trials", int, 50, "number of random fields"),
        Knob("field", str, "iid", "random field kind: iid or smooth"),
    ],
    "poincare": [
        Knob("R", _float, 8.0, "ball radius"),
        Knob("trials", int, 50, "number of random fields"),
        Knob("field", str, "iid", "random field kind: iid or smooth"),
        Knob("profile", str, "linear", "weight profile: " + ", ".join(sorted(PROFILES))),
    ],
    "llt": [
        Knob("n", _list(int), [8, 16, 32], "scales n"),
        Knob("R", _float, 1.0, "spatial radius of the grid"),
        Knob("t1", _float, 1.0, "first time"),
        Knob("t2", _float, 2.0, "last time"),
        Knob("x_step", _float, 1.0 / 64, "spatial grid step"),
        Knob("t_step", _float, 0.125, "time grid step"),
        Knob("M", _list(_float), None, "diffusion matrix, row-major (default: from the corrector)"),
        Knob("threshold", _float, 1e-2, "largest tolerated escape estimate"),
        Knob("long_format", _bool, False, "also write the per-point CSV"),
        Knob("tol", _float, 1e-12, "uniformization tolerance"),
    ],
}
AUDIT_ALL = ["moments", "corrector", "kernel", "sobolev", "poincare", "wphi", "maximal", "holder"]
COMMAND_HELP = {
    "env": "generate and save an environment",
    "moments": "per-site moment functionals and aggregates",
    "walk": "simulate the random walk: endpoints and empirical kernel",
    "kernel": "heat kernel slices and the on-diagonal check",
    "corrector": "corrector, diffusion matrix and sublinearity",
    "wphi": "weak parabolic Harnack inequality audit",
    "maximal": "maximal inequality audit",
    "holder": "oscillation decay of a caloric function",
    "sobolev": "Sobolev inequality audit over random fields",
    "poincare": "weighted Poincare inequality audit over random fields",
    "llt": "local limit theorem error curve",
    "audit-all": "run the audits " + ", ".join(AUDIT_ALL),
}
# settings that do not change results and stay out of the config hash
VOLATILE = ("threads", "out", "config")


# ----------------------------------------------------------------------
# serialization
def fmt(v):
    """17 significant digits; non-finite values as inf / -inf / nan."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple, np.ndarray)) for x in seq):
            return "[" + ", ".join(_json_value(x, indent, level + 1) for x in seq) + "]"
        return "[\n" + ",\n".join(pad + _json_value(x, indent, level + 1) for x in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return fmt(v) if math.isfinite(v) else json.dumps(fmt(v))
    return json.dumps(str(obj))


def dumps(obj, indent=1):
    """JSON text with floats at 17 significant digits and non-finite floats as strings."""
    return _json_value(obj, indent, 0) + "\n"


def _atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Outputs:
    """Artifact writer for one run; remembers what it wrote."""

    def __init__(self, root, plots=True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.plots = plots
        self.paths = []

    def _path(self, name):
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def json(self, name, obj):
        _atomic_write(self._path(name), dumps(obj))

    def text(self, name, text):
        _atomic_write(self._path(name), text)

    def csv(self, name, header, rows):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(str(int(v)) if isinstance(v, (int, np.integer)) else fmt(v) for v in row))
        _atomic_write(self._path(name), "\n".join(lines) + "\n")

    def figure(self, name, draw):
        """``draw(path)`` renders the figure to ``path``."""
        if self.plots:
            draw(self._path(name))

    def register(self, name):
        return self._path(name)


# ----------------------------------------------------------------------
# configuration
def _knobs(command):
    if command == "audit-all":
        return MODEL + EXPONENTS
    return MODEL + EXPONENTS + COMMANDS[command]


def _coerce(knob, value):
    if value is None:
        return None
    try:
        return knob.conv(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad value for {knob.flag}: {value!r} ({exc})") from None


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a mapping")
    return cfg


def resolve(command, file_cfg, flags):
    """Defaults, then config sections (top level, model, exponents, command), then flags."""
    knobs = {k.name: k for k in _knobs(command)}
    out = {name: k.default for name, k in knobs.items()}
    layered = {}
    for key, val in file_cfg.items():
        if not isinstance(val, dict):
            layered[key] = val
    for section in ("model", "exponents", command):
        sec = file_cfg.get(section) or {}
        if not isinstance(sec, dict):
            raise ValidationError(f"config section {section!r} must be a mapping")
        layered.update(sec)
    for key, val in layered.items():
        key = key.replace("-", "_")
        if key in knobs:
            out[key] = _coerce(knobs[key], val)
        elif key not in ("seed", "threads", "out", "plots") and key not in COMMANDS and key not in ("model", "exponents"):
            raise ValidationError(f"unknown config key {key!r} for command {command}")
    for key, val in flags.items():
        if key in knobs and val is not None:
            out[key] = _coerce(knobs[key], val)
    out["seed"] = int(flags.get("seed") if flags.get("seed") is not None else file_cfg.get("seed", 0))
    if out["seed"] < 0:
        raise ValidationError("seed must be nonnegative")
    return out


def sub_config(command, base, file_cfg):
    """Settings of ``command`` inside audit-all: model and exponents from ``base``."""
    out = {k.name: k.default for k in COMMANDS[command]}
    sec = file_cfg.get(command) or {}
    knobs = {k.name: k for k in COMMANDS[command]}
    for key, val in sec.items():
        key = key.replace("-", "_")
        if key not in knobs:
            raise ValidationError(f"unknown config key {key!r} for {command}")
        out[key] = _coerce(knobs[key], val)
    out.update({k: base[k] for k in base if k not in out})
    return out


# ----------------------------------------------------------------------
# geometry and validation (no compute)
@dataclass
class Geometry:
    d: int
    boundary: str
    radius: int
    side: int


def _peek_header(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"environment file {path} does not exist")
    if path.suffix == ".npz":
        with np.load(path) as data:
            return json.loads(bytes(data["header"]).decode())
    with open(path) as fh:
        return json.loads(fh.readline())


def geometry(cfg):
    if cfg["env"]:
        h = _peek_header(cfg["env"])
        d, L, boundary, side = int(h["d"]), int(h["L"]), h["boundary"], int(h["side"])
    else:
        d, L, boundary = cfg["d"], cfg["L"], cfg["boundary"]
        if cfg["model"] not in ("lrp", "poly", "const"):
            raise ValidationError(f"unknown model {cfg['model']!r}")
        if boundary not in ("torus", "box"):
            raise ValidationError(f"unknown boundary {boundary!r}")
        if d < 1 or L < 1:
            raise ValidationError("need d >= 1 and L >= 1")
        if cfg["model"] == "lrp" and not cfg["s"] > 0:
            raise ValidationError("s must be positive")
        if cfg["model"] == "poly":
            if not cfg["s"] > 2:
                raise ValidationError("s must exceed 2 for model poly")
            if not isinstance(cfg["xi"], dict):
                raise ValidationError("model poly needs --xi as a JSON mapping")
        side = cfg["side"] or (2 * L + 1 if boundary == "box" else 2 * L)
        if boundary == "torus" and cfg["ell_max"] is not None and cfg["ell_max"] > 2 * L:
            raise ValidationError("ell_max must not exceed 2L on the torus")
    radius = L if boundary == "box" else (side - 1) // 2
    return Geometry(d, boundary, radius, side)


def _need(cond, message, **details):
    if not cond:
        raise ValidationError(message, **details)


def exponents_of(cfg, d):
    _need(cfg["p"] > 1 and cfg["q"] > 1, "p and q must exceed 1")
    return ExponentSet(d, cfg["p"], cfg["q"], cfg["m"], cfg["s"])


def validate(command, cfg, geo):
    e = exponents_of(cfg, geo.d)
    pos = lambda k: _need(cfg[k] is not None and cfg[k] > 0, f"--{k.replace('_', '-')} must be positive")
    if command == "env":
        _need(cfg["format"] in ("jsonl", "npz"), "format must be jsonl or npz")
    elif command == "moments":
        _need(all(m > 0 for m in cfg["m_list"]), "moment orders must be positive")
    elif command == "walk":
        pos("t")
        _need(cfg["n"] >= 1 and cfg["N"] >= 1, "need n >= 1 and N >= 1")
        _need(cfg["stream"] >= 0, "stream id must be nonnegative")
    elif command == "kernel":
        _need(cfg["t"] and all(t >= 0 for t in cfg["t"]), "slice times must be nonnegative")
        _need(all(t > 0 for t in cfg["ondiag"]), "on-diagonal times must be positive")
        pos("tol")
        pos("factor")
    elif command == "corrector":
        _need(geo.boundary == "torus", "the corrector needs a torus environment")
        pos("tol")
        _need(cfg["max_iter"] >= 1, "max_iter must be >= 1")
        if cfg["radii"] is not None:
            _need(all(r >= 1 for r in cfg["radii"]), "radii must be >= 1")
    elif command == "wphi":
        r, R, t0 = cfg["r"], cfg["R"], cfg["t0"]
        _need(2 <= r < R / 4, "need 2 <= r < R/4", r=r, R=R)
        _need(t0 - 4 * r * r >= -R * R and t0 + 4 * r * r <= R * R,
              "need [t0 - 4r^2, t0 + 4r^2] inside [-R^2, R^2]", t0=t0, r=r, R=R)
        _need(R <= geo.radius, f"R exceeds the box radius {geo.radius}")
        _need(cfg["trials"] >= 1, "trials must be >= 1")
        _need(cfg["initial"] in ("delta", "constant", "random"), "initial must be delta, constant or random")
        _need(cfg["value"] >= 0, "initial data must be nonnegative")
        if cfg["dt"] is not None:
            pos("dt")
        pos("tol")
    elif command == "maximal":
        n = cfg["n"]
        _need(n >= 1, "n must be >= 1")
        _need(e.m is not None and e.m >= 2, "m must be >= 2")
        _need(0.5 <= cfg["theta_prime"] < cfg["theta"] < 1, "need 1/2 <= theta' < theta < 1")
        _need(2 * n <= geo.radius, f"2n exceeds the box radius {geo.radius}")
        pos("dt")
        pos("kappa1")
        pos("tol")
    elif command == "holder":
        _need(1 <= cfg["R"] <= geo.radius, f"R must lie in [1, {geo.radius}]")
        _need(cfg["base"] > 1, "base must exceed 1")
        if cfg["dt"] is not None:
            pos("dt")
        pos("tol")
    elif command in ("sobolev", "poincare"):
        _need(1 <= cfg["R"] <= geo.radius, f"R must lie in [1, {geo.radius}]")
        _need(cfg["trials"] >= 1, "trials must be >= 1")
        _need(cfg["field"] in ("smooth", "iid"), "field must be smooth or iid")
        if command == "sobolev":
            rep = check_assumptions(e)
            _need(rep.sobolev, "exponents violate (1 - 1/d)/p + 1/q <= 1/d", p=e.p, q=e.q, d=e.d)
            _need(math.isfinite(e.rho), "rho is infinite for these exponents")
        else:
            _need(cfg["profile"] in PROFILES, f"profile must be one of {sorted(PROFILES)}")
    elif command == "llt":
        ns = cfg["n"]
        _need(ns and all(n >= 1 for n in ns) and all(b > a for a, b in zip(ns, ns[1:])),
              "n must be a strictly increasing list of positive integers")
        _need(0 < cfg["t1"] <= cfg["t2"], "need 0 < t1 <= t2")
        _need(cfg["R"] >= 0, "R must be nonnegative")
        pos("x_step")
        pos("t_step")
        pos("threshold")
        pos("tol")
        _need(max(ns) * cfg["R"] < geo.radius, "the spatial grid leaves the box at the largest n")
        if cfg["M"] is not None:
            _need(len(cfg["M"]) == geo.d * geo.d, f"M needs {geo.d * geo.d} entries")
            GaussianKernelParams.from_matrix(np.reshape(cfg["M"], (geo.d, geo.d)))
        else:
            _need(geo.boundary == "torus", "box environments need an explicit --M")
    return e


# ----------------------------------------------------------------------
# environment
def obtain_env(cfg, threads):
    if cfg["env"]:
        return load_environment(cfg["env"])
    kw = dict(L=cfg["L"], boundary=cfg["boundary"], side=cfg["side"])
    if cfg["model"] == "const":
        return constant_environment(cfg["d"], **kw)
    if cfg["model"] == "lrp":
        return gen_long_range_percolation(cfg["d"], cfg["s"], ell_max=cfg["ell_max"], seed=cfg["seed"],
                                          threads=threads, **kw)
    return gen_polynomial_conductance(cfg["d"], cfg["s"], cfg["xi"], ell_max=cfg["ell_max"], seed=cfg["seed"],
                                      threads=threads, **kw)


def env_summary(env):
    pi = env.pi
    return {
        "header": env.header(),
        "n_sites": env.n_sites,
        "n_edges": env.n_edges,
        "n_outer_sites": env.n_total - env.n_sites,
        "pi_min": float(pi.min()),
        "pi_max": float(pi.max()),
        "pi_mean": float(pi.mean()),
        "dropped_second_moment": env.meta.get("dropped_second_moment"),
    }


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _coords(env, idx):
    return env.coords[idx].tolist()


# ----------------------------------------------------------------------
# commands
def run_env(cfg, env, e, out, threads):
    name = "env.npz" if cfg["format"] == "npz" else "env.jsonl"
    path = out.register(name)
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    save_environment(env, tmp)
    os.replace(tmp, path)
    out.json("env_summary.json", env_summary(env))


def run_moments(cfg, env, e, out, threads):
    prof = moments(env, m_list=cfg["m_list"], p=e.p, q=e.q)
    header = [f"x_{i + 1}" for i in range(env.d)] + ["mu", "nu"] + [f"mu_{m:g}" for m in prof.mu_m] + ["mu_star"]
    cols = [prof.mu, prof.nu] + list(prof.mu_m.values()) + [prof.mu_star]
    rows = ([*x, *vals] for x, vals in zip(env.coords[: env.n_sites].tolist(), zip(*cols)))
    out.csv("moments.csv", header, rows)
    out.json("moments.json", {
        "summary": prof.summary(),
        "exponents": e.to_dict(),
        "assumptions": check_assumptions(e).to_dict(),
        "mu_m_max": {f"{m:g}": float(v.max()) for m, v in prof.mu_m.items()},
        "mu_star_max": float(prof.mu_star.max()),
    })


def run_walk(cfg, env, e, out, threads):
    n, t, N, sid = cfg["n"], cfg["t"], cfg["N"], cfg["stream"]
    samples = scaled_endpoint_samples(env, n, t, N, sid, cfg["seed"], threads)
    kern = empirical_kernel(env, n * n * t, N, sid, cfg["seed"], threads=threads)
    rows = ([t, n, *p] for p in samples.points.tolist())
    out.csv("endpoints.csv", ["t", "n"] + [f"x_{i + 1}" for i in range(env.d)], rows)
    out.json("empirical_kernel.json", kern.to_dict(env))
    pts = samples.points
    out.json("walk_summary.json", {
        "n": n, "t": t, "N": N, "stream": sid,
        "mean": pts.mean(axis=0).tolist() if len(pts) else None,
        "covariance": samples.covariance().tolist() if len(pts) > 1 else None,
        "killed_fraction": samples.killed_fraction,
        "warnings": samples.warnings,
    })
    if len(pts):
        out.figure("endpoints.png", lambda path: plotting.endpoint_scatter(pts, path, n, t))


def run_kernel(cfg, env, e, out, threads):
    times = sorted(cfg["t"])
    fields = evolve_at(env, delta(env), times, cfg["tol"])
    info = []
    for k, (t, p) in enumerate(zip(times, fields)):
        rows = ([*x, v] for x, v in zip(env.coords[: env.n_sites].tolist(), p))
        out.csv(f"kernel_t{k}.csv", [f"x_{i + 1}" for i in range(env.d)] + ["value"], rows)
        info.append({"t": t, "file": f"kernel_t{k}.csv", "mass": float(p.sum()), "max": float(p.max())})
    rep = ondiag_check(env, cfg["ondiag"], cfg["factor"], tol=cfg["tol"])
    out.json("kernel.json", {"slices": info, "tol": cfg["tol"], "ondiag": rep.to_dict(),
                             "note": "boundedness is reported over the tested grid only"})
    out.figure("kernel_slice.png",
               lambda path: plotting.kernel_slice(env, fields[-1], path, f"p({times[-1]:g}, 0, .)"))
    if rep.scaled_sup:
        out.figure("ondiag.png", lambda path: plotting.ondiag(rep, path))


def _radii(cfg, env):
    if cfg["radii"] is not None:
        return cfg["radii"]
    out, r = [], 2
    while r <= env.side / 2:
        out.append(float(r))
        r *= 2
    return out


def run_corrector(cfg, env, e, out, threads):
    cf = solve_corrector(env, cfg["tol"], cfg["max_iter"])
    cert = residual_certificate(env, cf.chi)
    M = diffusion_matrix(env, cf)
    sub = sublinearity_report(env, cf, _radii(cfg, env), e.p)
    lines = [dumps({"x": x, "chi": c}, indent=0).replace("\n", "") for x, c in
             zip(env.coords[: env.n_sites].tolist(), cf.chi.tolist())]
    out.text("chi.jsonl", "\n".join(lines) + "\n")
    out.json("diffusion_matrix.json", {**M.to_dict(), **cf.to_dict(), "certificate": cert.tolist()})
    out.json("sublinearity.json", sub.to_dict())
    if sub.radii:
        out.figure("sublinearity.png", lambda path: plotting.sublinearity(sub, path))


def _ball_point(env, R, seed, trial):
    ball = env.ball(R)
    k = int(stream(seed, "trials", trial, 1).integers(len(ball)))
    return tuple(int(v) for v in env.coords[ball[k]])


def run_wphi(cfg, env, e, out, threads):
    r, R, t0 = cfg["r"], cfg["R"], cfg["t0"]

    def trial(k):
        start = _ball_point(env, R / 2, cfg["seed"], k) if cfg["initial"] == "delta" else None
        spec = DataSpec(cfg["initial"], cfg["value"], start, cfg["exterior_value"],
                        cfg["exterior_min_radius"], cfg["seed"], k)
        return wphi_report(env, t0, r, R, spec, e, dt=cfg["dt"], tol=cfg["tol"])

    reps = _pmap(trial, list(range(cfg["trials"])), threads)
    consts = [rep.implied_constant for rep in reps]
    rows = [[k, rep.lhs, rep.rhs["inf_u_plus"], rep.rhs["tail_term"], rep.implied_constant]
            for k, rep in enumerate(reps)]
    out.csv("wphi_trials.csv", ["trial", "lhs", "inf_u_plus", "tail_term", "implied_constant"], rows)
    out.json("wphi.json", {
        "max_implied_constant": max(consts),
        "min_implied_constant": min(consts),
        "all_finite_positive": all(math.isfinite(c) and c > 0 for c in consts),
        "exponents": e.to_dict(),
        "trials": [rep.to_dict() for rep in reps],
    })
    out.figure("wphi.png", lambda path: plotting.implied_constants(consts, path, "weak Harnack: implied constants"))


def run_maximal(cfg, env, e, out, threads):
    n = cfg["n"]
    cyl = Cylinder(-4.0 * n * n, 0.0, 2 * n)
    u = killed_kernel(env, cyl, np.zeros(env.d, dtype=np.int64), dt=cfg["dt"], tol=cfg["tol"])
    rep = maximal_report(env, u, n, e.m, cfg["theta"], cfg["theta_prime"], e, cfg["kappa1"], outside_sup=0.0)
    out.json("maximal.json", {**rep.to_dict(), "field": "heat kernel from the origin killed outside B_2n"})


def run_holder(cfg, env, e, out, threads):
    u = caloric_from_delta(env, cfg["R"], dt=cfg["dt"], tol=cfg["tol"])
    rep = holder_report(env, u, cfg["R"], cfg["base"])
    out.json("holder.json", {**rep.to_dict(), "field": "heat kernel from the origin killed outside B_R"})
    out.figure("holder.png", lambda path: plotting.oscillation(rep, path))


def _field_trials(cfg, env, audit, name, out, threads):
    def trial(k):
        u = random_field(env, cfg["R"], cfg["field"], stream(cfg["seed"], "trials", k))
        return audit(u)

    reps = _pmap(trial, list(range(cfg["trials"])), threads)
    consts = [rep.implied_constant for rep in reps]
    out.csv(f"{name}_trials.csv", ["trial", "lhs", "implied_constant"],
            [[k, rep.lhs, rep.implied_constant] for k, rep in enumerate(reps)])
    out.json(f"{name}.json", {
        "max_implied_constant": max(consts),
        "all_finite": all(math.isfinite(c) for c in consts),
        "field": cfg["field"],
        "trials": [rep.to_dict() for rep in reps],
    })
    out.figure(f"{name}.png", lambda path: plotting.implied_constants(consts, path, f"{name}: implied constants"))


def run_sobolev(cfg, env, e, out, threads):
    _field_trials(cfg, env, lambda u: sobolev_audit(env, u, cfg["R"], e), "sobolev", out, threads)


def run_poincare(cfg, env, e, out, threads):
    _field_trials(cfg, env, lambda u: poincare_audit(env, u, cfg["R"], cfg["profile"]), "poincare", out, threads)


def run_llt(cfg, env, e, out, threads):
    meta = {}
    if cfg["M"] is not None:
        M = np.reshape(cfg["M"], (env.d, env.d))
        meta["M_source"] = "given"
    else:
        cf = solve_corrector(env)
        M = diffusion_matrix(env, cf).M
        meta.update(M_source="corrector", corrector_residuals=cf.residuals.tolist())
    params = GaussianKernelParams.from_matrix(M)
    grid = LLTGrid(cfg["x_step"], cfg["t_step"])
    curve = convergence_study(env, params, cfg["n"], cfg["R"], cfg["t1"], cfg["t2"], grid, cfg["tol"],
                              cfg["threshold"], cfg["long_format"])
    out.csv("llt_curve.csv", ["n", "E_n"], [[n, err] for n, err in zip(curve.n, curve.errors)])
    out.json("llt.json", {**curve.to_dict(), "M": params.M.tolist(), **meta})
    if cfg["long_format"]:
        header = ["n", "t"] + [f"x_{i + 1}" for i in range(env.d)] + ["rescaled_p", "gaussian", "abs_err"]
        out.csv("llt_long.csv", header, curve.records)
    out.figure("llt.png", lambda path: plotting.llt_curve(curve, path))


RUNNERS = {
    "env": run_env, "moments": run_moments, "walk": run_walk, "kernel": run_kernel,
    "corrector": run_corrector, "wphi": run_wphi, "maximal": run_maximal, "holder": run_holder,
    "sobolev": run_sobolev, "poincare": run_poincare, "llt": run_llt,
}


# ----------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="rcm-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rcm-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in list(COMMANDS) + ["audit-all"]:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        g = p.add_argument_group("common")
        g.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        g.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
        g.add_argument("--out", default="rcm-out", help="output directory")
        g.add_argument("--config", default=None, help="YAML config; flags override it")
        g.add_argument("--no-plots", action="store_true", help="skip figures")
        for group, knobs in (("environment", MODEL), ("exponents", EXPONENTS),
                             (name, COMMANDS.get(name, []))):
            grp = p.add_argument_group(group)
            for k in knobs:
                grp.add_argument(k.flag, dest=k.name, default=None, help=f"{k.help} (default {k.default})")
    return parser


def _versions():
    import matplotlib
    import scipy

    return {"rcmlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def _hash_config(command, cfg):
    clean = {k: v for k, v in cfg.items() if k not in VOLATILE}
    text = dumps({"command": command, "config": clean})
    return hashlib.sha256(text.encode()).hexdigest(), clean


def execute(args):
    file_cfg = load_config(args.config)
    flags = vars(args)
    threads = int(flags.get("threads") or file_cfg.get("threads") or 1)
    _need(threads >= 1, "threads must be >= 1")
    command = args.command
    cfg = resolve(command, file_cfg, flags)
    geo = geometry(cfg)
    if command == "audit-all":
        plan = [c for c in AUDIT_ALL if not (c == "corrector" and geo.boundary != "torus")]
        subs = {c: sub_config(c, cfg, file_cfg) for c in plan}
        exps = {c: validate(c, subs[c], geo) for c in plan}
    else:
        plan, subs = [command], {command: cfg}
        exps = {command: validate(command, cfg, geo)}

    plots = not args.no_plots and file_cfg.get("plots", True)
    out = Outputs(args.out, plots=plots)
    started = time.time()
    env = obtain_env(cfg, threads)
    env_sha = hashlib.sha256(dumps_jsonl(env).encode()).hexdigest()
    for c in plan:
        sub_out = out if command != "audit-all" else _Sub(out, c)
        RUNNERS[c](subs[c], env, exps[c], sub_out, threads)

    audits = {}
    if command == "audit-all":
        audits = {"audits": {c: {k.name: subs[c][k.name] for k in COMMANDS[c]} for c in plan}}
    cfg_sha, clean = _hash_config(command, {**cfg, **audits})
    artifacts = {str(p.relative_to(out.root)): _sha256(p) for p in out.paths}
    manifest = {
        "command": command,
        "config": clean,
        "config_sha256": cfg_sha,
        "environment_sha256": env_sha,
        "environment": env_summary(env),
        "versions": _versions(),
        "artifacts": dict(sorted(artifacts.items())),
        "volatile": {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "wall_clock_seconds": time.time() - started,
            "threads": threads,
        },
    }
    _atomic_write(out.root / "manifest.json", dumps(manifest))
    return 0


class _Sub:
    """Prefix every artifact name with a subdirectory (used by audit-all)."""

    def __init__(self, out, prefix):
        self._out, self._prefix = out, prefix

    def __getattr__(self, name):
        attr = getattr(self._out, name)
        if name in ("json", "text", "csv", "figure", "register"):
            return lambda fname, *a: attr(f"{self._prefix}/{fname}", *a)
        return attr


def _out_dir(argv):
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--out="):
            return a.split("=", 1)[1]
    return "rcm-out"


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return execute(args)
    except RCMError as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "details": exc.details,
                  "exit_code": exc.exit_code}
        try:
            root = Path(_out_dir(argv))
            root.mkdir(parents=True, exist_ok=True)
            _atomic_write(root / "error.json", dumps(report))
        except OSError:
            pass
        print(f"rcm-lab: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
