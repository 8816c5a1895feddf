"""Scenario documents, presets and on-disk formats.

Configs and sidecars are JSON; bulk numerics are CSV (comma separated,
header row, LF line endings, values printed with 17 significant digits so
they round-trip exactly).  Every file is written to a temporary name and
renamed into place.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import IntegrityError, ParseError, ValidationError
from .grid import build_grid
from .memory import MemoryKernel, load_kernel_csv
from .physics import (CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec,
                      load_insolation_csv)
from .stepper import ModelParams, Trajectory

FORMAT_VERSION = 1

DEFAULTS = {
    "description": "",
    "grid": {"n": 64, "rho0": 0.3},
    "insolation": {"q": "legendre_p2", "scale": 1.0, "table": None,
                   "r": {"kind": "constant", "mean": 1.0, "amplitude": 0.0, "period": 1.0}},
    "coalbedo": {"kind": "sellers_smooth", "a_i": 0.38, "a_f": 0.68, "u_bar": -10.0,
                 "width": 10.0, "j": None, "j_schedule": [4, 8, 16, 32, 64, 128, 256, 512, 1024]},
    "emission": {"kind": "sellers", "epsilon": "constant", "epsilon1": 1.0, "epsilon2": 1.0,
                 "u_c": 0.0, "width": 5.0, "a": 0.0, "b": 1.0},
    "memory_response": {"f_bound": 0.0, "h_scale": 1.0},
    "kernel": {"kind": "cosine", "tau": 1.0, "delta": 0.5, "level": 1.0,
               "support_flag": None, "table": None},
    "u0": {"kind": "constant", "mean": 0.0, "amplitude": 0.0, "slope": 0.0, "drift": 0.0},
    "run": {"T": 1.0, "target_dt": 1e-3, "seed": 0, "bound_slack": 0.05, "stride": 1},
    "budyko": {"tol": 1e-2, "band_tol": None, "value_tol": 1e-6, "stop_early": True},
    "inverse": {"t_eval": 0.1, "x0": 0.0, "t0": 0.05, "T_prime": 0.2, "a": -0.5, "b": 0.5,
                "bump": {"height": 0.1, "lo": 0.2, "hi": 0.6},
                "amplitudes": [1e-3, 1e-2, 1e-1], "reg_weight": 0.0, "max_iters": 500,
                "allow_late": False},
}


def _schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    name: str
    config: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.config[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.config)

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def build_params(self) -> ModelParams:
        c = self.config
        grid = build_grid(c["grid"]["n"], c["grid"]["rho0"])
        ins, r = c["insolation"], c["insolation"]["r"]
        table = load_insolation_csv(self._path(ins["table"])) if ins["q"] == "table" else None
        insolation = InsolationSpec.build(ins["q"], ins["scale"], r["kind"], r["mean"],
                                          r["amplitude"], r["period"], table=table)
        cb = c["coalbedo"]
        coalbedo = CoalbedoSpec(cb["kind"], cb["a_i"], cb["a_f"], cb["u_bar"], cb["width"], cb["j"])
        em = c["emission"]
        if em["kind"] == "budyko":
            emission = EmissionSpec.budyko(em["a"], em["b"])
        elif em["epsilon"] == "logistic":
            emission = EmissionSpec.sellers_logistic(em["epsilon1"], em["epsilon2"],
                                                     em["u_c"], em["width"])
        else:
            emission = EmissionSpec.sellers(em["epsilon1"])
        mr = MemoryResponseSpec(c["memory_response"]["f_bound"], c["memory_response"]["h_scale"])
        k = c["kernel"]
        if k["kind"] == "table":
            kernel = load_kernel_csv(self._path(k["table"]), tau=k["tau"], delta=k["delta"],
                                     support_flag=k["support_flag"])
        else:
            kernel = getattr(MemoryKernel, k["kind"])(k["tau"], k["delta"], k["level"],
                                                     k["support_flag"])
        return ModelParams(insolation, coalbedo, emission, mr, kernel, grid)

    def build_u0(self):
        u = self.config["u0"]
        mean, amp, slope, drift = u["mean"], u["amplitude"], u["slope"], u["drift"]
        kind = u["kind"]
        if kind == "constant":
            return lambda s, x: mean + drift * s + 0.0 * np.asarray(x)
        if kind == "p2":
            return lambda s, x: mean + amp * 0.5 * (3.0 * np.asarray(x) ** 2 - 1.0) + drift * s
        if kind == "cos2":
            return lambda s, x: mean + amp * np.cos(0.5 * np.pi * np.asarray(x)) ** 2 + drift * s
        return lambda s, x: mean + slope * np.asarray(x) + drift * s


def parse_scenario(text: str, base_dir=None) -> Scenario:
    """Validate a JSON scenario document and fill every default."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    validator = jsonschema.Draft7Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(err.message, field=path)
    cfg = _merge(DEFAULTS, doc)
    cb = cfg["coalbedo"]
    if not cb["a_i"] < cb["a_f"]:
        raise ValidationError("a_i < a_f violated", field="coalbedo.a_i")
    if cb["kind"] == "budyko_regularized" and cb["j"] is None:
        raise ValidationError("budyko_regularized needs j", field="coalbedo.j")
    js = cb["j_schedule"]
    if any(b <= a for a, b in zip(js, js[1:])):
        raise ValidationError("j_schedule must be strictly increasing", field="coalbedo.j_schedule")
    k = cfg["kernel"]
    if not k["delta"] < k["tau"]:
        raise ValidationError("δ < τ violated", field="kernel.delta")
    if k["support_flag"] and k["delta"] == 0:
        raise ValidationError("support_flag needs delta > 0", field="kernel.support_flag")
    em = cfg["emission"]
    if em["kind"] == "sellers" and em["epsilon"] == "logistic" and em["epsilon2"] < em["epsilon1"]:
        raise ValidationError("epsilon2 >= epsilon1 violated", field="emission.epsilon2")
    inv = cfg["inverse"]
    if not inv["a"] < inv["b"]:
        raise ValidationError("a < b violated", field="inverse.a")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key, sect in (("insolation", cfg["insolation"]), ("kernel", cfg["kernel"])):
        wants = sect["q"] if key == "insolation" else sect["kind"]
        if wants == "table":
            if not sect["table"]:
                raise ValidationError("table path required", field=f"{key}.table")
            p = Path(sect["table"])
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ValidationError(f"table file {p} does not exist", field=f"{key}.table")
    return Scenario(name=cfg["name"], config=cfg, base_dir=base)


def load_scenario(path) -> Scenario:
    """Read a scenario file, or a shipped preset given as ``@name``."""
    s = str(path)
    if s.startswith("@"):
        return load_preset(s[1:])
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)


def preset_names() -> list:
    d = resources.files(__package__).joinpath("presets")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> Scenario:
    res = resources.files(__package__).joinpath("presets").joinpath(f"{name}.json")
    if not res.is_file():
        raise ValidationError(f"unknown preset {name!r}; available: {preset_names()}", field="name")
    return parse_scenario(res.read_text())


# -- atomic writes --------------------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def table_to_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> str:
    text = table_to_csv(header, rows)
    atomic_write_text(path, text)
    return text


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _read_matrix(path, first_col: str):
    """Parse a numeric CSV whose first header is ``first_col``; returns (col0, matrix)."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ParseError("file not found", path=str(path)) from None
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError("empty file", line=1, path=str(path))
    header = rows[0]
    if not header or header[0] != first_col:
        raise ParseError(f"expected first column {first_col!r}", line=1, path=str(path))
    width = len(header)
    data = []
    for lineno, rec in enumerate(rows[1:], start=2):
        if len(rec) != width:
            raise ParseError(f"expected {width} fields, got {len(rec)}", line=lineno, path=str(path))
        try:
            data.append([float(v) for v in rec])
        except ValueError:
            raise ParseError("non-numeric field", line=lineno, path=str(path)) from None
    if not data:
        raise ParseError("no data rows", line=2, path=str(path))
    arr = np.array(data)
    return header, arr, text


# -- trajectories -----------------------------------------------------------------------

def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".csv", ".json") else path


def write_trajectory(traj: Trajectory, path) -> dict:
    """Write <stem>.csv (t, x_0..), <stem>.history.csv (s, x_0..) and <stem>.json."""
    stem = _stem(path)
    n = traj.states.shape[-1]
    if traj.states.ndim != 2:
        raise ValueError("only unbatched trajectories can be serialized")
    xs = [f"x_{i}" for i in range(n)]
    data = write_csv(stem.with_suffix(".csv"), ["t", *xs],
                     ([t, *row] for t, row in zip(traj.times, traj.states)))
    s = -(traj.history_0.shape[0] - 1) * traj.dt + np.arange(traj.history_0.shape[0]) * traj.dt
    hist = write_csv(stem.parent / f"{stem.name}.history.csv", ["s", *xs],
                     ([si, *row] for si, row in zip(s, traj.history_0)))
    meta = {
        "format_version": FORMAT_VERSION,
        "params_digest": traj.params_digest,
        "dt": traj.dt,
        "stride": traj.stride,
        "grid": {"n": traj.grid_n, "rho0": traj.grid_rho0},
        "sup_norm_seen": traj.sup_norm_seen,
        "bound": traj.bound,
        "n_times": int(len(traj.times)),
        "data_sha256": _sha(data),
        "history_sha256": _sha(hist),
    }
    if traj.memory is not None:
        mem = write_csv(stem.parent / f"{stem.name}.memory.csv", ["t", *xs],
                        ([t, *row] for t, row in zip(traj.times, traj.memory)))
        meta["memory_sha256"] = _sha(mem)
    write_json(stem.with_suffix(".json"), meta)
    return meta


def read_trajectory(path, params_digest: Optional[str] = None) -> Trajectory:
    stem = _stem(path)
    meta_path = stem.with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise ParseError("sidecar not found", path=str(meta_path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(meta_path)) from None
    for key in ("params_digest", "dt", "grid", "sup_norm_seen", "n_times", "data_sha256",
                "history_sha256"):
        if key not in meta:
            raise ParseError(f"sidecar missing {key!r}", path=str(meta_path))
    header, arr, text = _read_matrix(stem.with_suffix(".csv"), "t")
    if _sha(text) != meta["data_sha256"]:
        raise IntegrityError(f"{stem}.csv does not match the sidecar digest")
    hheader, harr, htext = _read_matrix(stem.parent / f"{stem.name}.history.csv", "s")
    if _sha(htext) != meta["history_sha256"]:
        raise IntegrityError(f"{stem}.history.csv does not match the sidecar digest")
    if arr.shape[0] != meta["n_times"] or arr.shape[1] - 1 != meta["grid"]["n"]:
        raise IntegrityError("trajectory shape disagrees with sidecar")
    if params_digest is not None and params_digest != meta["params_digest"]:
        raise IntegrityError("trajectory was produced with different model parameters")
    memory = None
    if "memory_sha256" in meta:
        _, marr, mtext = _read_matrix(stem.parent / f"{stem.name}.memory.csv", "t")
        if _sha(mtext) != meta["memory_sha256"]:
            raise IntegrityError(f"{stem}.memory.csv does not match the sidecar digest")
        memory = marr[:, 1:]
    return Trajectory(
        times=arr[:, 0], states=arr[:, 1:], history_0=harr[:, 1:],
        params_digest=meta["params_digest"], sup_norm_seen=meta["sup_norm_seen"],
        dt=meta["dt"], grid_n=meta["grid"]["n"], grid_rho0=meta["grid"]["rho0"],
        stride=meta.get("stride", 1), bound=meta.get("bound"), memory=memory,
    )


# -- observations and reconstructions --------------------------------------------------------

def write_observations(obs, path) -> None:
    """Tidy CSV (quantity, t, x, value) plus a JSON descriptor."""
    stem = _stem(path)
    s = obs.samples
    rows = []
    for ti, t in enumerate(s["t"]):
        for xi, x in enumerate(s["x"]):
            rows.append(["u_t", t, x, s["u_t"][ti, xi]])
    Tp = obs.window["T_prime"]
    xs_all = np.linspace(-1, 1, len(s["u_snap"]) + 1)
    centers = 0.5 * (xs_all[:-1] + xs_all[1:])
    for x, v in zip(centers, s["u_snap"]):
        rows.append(["u_snap", Tp, x, v])
    for x, v in zip(centers, s["Au_snap"]):
        rows.append(["Au_snap", Tp, x, v])
    text = write_csv(stem.with_suffix(".csv"), ["quantity", "t", "x", "value"], rows)
    win = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in obs.window.items()}
    write_json(stem.with_suffix(".json"), {
        "kind": obs.kind, "window": win, "noise_level": obs.noise_level, "seed": obs.seed,
        "dt": obs.dt, "T": obs.T, "exploratory": obs.exploratory, "data_sha256": _sha(text),
    })


def read_observations(path):
    from .inverse import ObservationSet

    stem = _stem(path)
    meta = json.loads(stem.with_suffix(".json").read_text())
    text = stem.with_suffix(".csv").read_text()
    if _sha(text) != meta["data_sha256"]:
        raise IntegrityError(f"{stem}.csv does not match the descriptor digest")
    rows = list(csv.reader(text.splitlines()))
    if rows[0] != ["quantity", "t", "x", "value"]:
        raise ParseError("bad observation header", line=1, path=str(stem))
    by_q = {"u_t": [], "u_snap": [], "Au_snap": []}
    for lineno, rec in enumerate(rows[1:], start=2):
        if len(rec) != 4 or rec[0] not in by_q:
            raise ParseError(f"bad observation row {rec!r}", line=lineno, path=str(stem))
        by_q[rec[0]].append([float(v) for v in rec[1:]])
    win = dict(meta["window"])
    for k in ("time_idx", "cell_idx"):
        win[k] = np.array(win[k], dtype=int)
    win["time_w"] = np.array(win["time_w"], dtype=float)
    ut = np.array(by_q["u_t"])
    nt, nx = len(win["time_idx"]), len(win["cell_idx"])
    samples = {
        "u_t": ut[:, 2].reshape(nt, nx),
        "t": ut[::nx, 0],
        "x": ut[:nx, 1],
        "u_snap": np.array(by_q["u_snap"])[:, 2],
        "Au_snap": np.array(by_q["Au_snap"])[:, 2],
    }
    return ObservationSet(kind=meta["kind"], samples=samples, window=win,
                          noise_level=meta["noise_level"], seed=meta["seed"], dt=meta["dt"],
                          T=meta["T"], exploratory=meta.get("exploratory", False))


def write_reconstruction(result, path, extra: Optional[dict] = None) -> None:
    stem = _stem(path)
    qt = result.q_true if result.q_true is not None else np.full_like(result.q_hat, np.nan)
    write_csv(stem.with_suffix(".csv"), ["x", "q_true", "q_hat"],
              zip(result.x, qt, result.q_hat))
    metrics = {
        "rel_l2_error": result.rel_l2_error,
        "residual_norm": result.residual_norm,
        "regularization_weight": result.regularization_weight,
        "iterations": result.iterations,
        "objective_history": list(result.objective_history),
        "exploratory": result.exploratory,
    }
    if extra:
        metrics.update(extra)
    write_json(stem.with_suffix(".json"), metrics)
