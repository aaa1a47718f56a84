"""Command-line driver.

Usage::

    cwmeter <scenario> --config run.yaml [--out DIR] [--seed N]

Scenarios are ``landscape``, ``thresholds``, ``dephase``, ``register``,
``povm`` and ``pipeline``.  The YAML file is validated against
:data:`SCHEMA` before anything is computed; unknown keys are rejected with the
line they appear on.

Every artifact embeds the fully resolved configuration and a SHA-256 digest of
its payload.  CSV files start with ``#`` comment lines (``# config: {...}``,
``# sha256: ...``) followed by a mandatory header row.  Wall-clock timings go
to ``timing.json`` so that all other files are byte-identical across repeated
runs with the same configuration and seed.

Exit status: 0 on success, 2 for configuration errors, 3 when the solver
aborts (partial snapshots are still written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import dynamics as dyn
from . import landscape as land
from . import povm
from .core import ApparatusParams, BlochState, init_joint_field

log = logging.getLogger("cwmeter")

SCENARIOS = ("landscape", "thresholds", "dephase", "register", "povm", "pipeline")
EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3

_APPARATUS = {
    "N": (int, 161), "J2": (float, 0.0), "J4": (float, 1.0), "g": (float, 0.1),
    "gamma": (float, 0.01), "beta": (float, 5.0), "Gamma": ("float?", None),
}

SCHEMA = {
    "scenario": (str, None),
    "seed": (int, 0),
    "apparatus": dict(_APPARATUS),
    "apparatus_p": dict(_APPARATUS),
    "spin": {"rx": (float, 0.0), "ry": (float, 0.0), "rz": (float, 1.0)},
    "solver": {
        "t_end": (float, 8.0),
        "snapshot_times": ("floats", None),
        "integrator": (str, "rk4"),
        "dt": ("float?", None),
        "dt_factor": (float, 0.25),
        "allow_unequal_temperatures": (bool, False),
        "frame_transport": (bool, True),
        "clip_tol": (float, 1e-12),
        "drift_tol": (float, 1e-6),
    },
    "dephase": {"t_max": (float, 4.0), "n_times": (int, 41)},
    "povm": {
        "n_samples": (int, 100000),
        "lambda": ("float?", None),
        "lambda_prime": ("float?", None),
        "alpha_x": ("float?", None),
        "alpha_z": ("float?", None),
    },
    "pipeline": {
        "states": ("pairs", [[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0],
                             [0.6, 0.8], [-0.6, -0.8]]),
        "n_samples": (int, 100000),
    },
    "output": {"dir": (str, "cwmeter_out")},
}


class ConfigError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        where = f"{path}: " if path else ""
        at = f"line {line}: " if line else ""
        super().__init__(f"{where}{at}{message}")


# ------------------------------------------------------------------ config


def _line_map(node, prefix=(), out=None):
    """Map key paths to 1-based source lines using the YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _coerce(kind, value, where):
    if kind == "float?":
        return None if value is None else _coerce(float, value, where)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where} must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where} must be an integer")
        return int(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where} must be true or false")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ValueError(f"{where} must be a string")
        return value
    if kind == "floats":
        if value is None:
            return None
        if not isinstance(value, list):
            raise ValueError(f"{where} must be a list of numbers")
        return [_coerce(float, v, where) for v in value]
    if kind == "pairs":
        if not isinstance(value, list) or not all(isinstance(p, list) and len(p) == 2 for p in value):
            raise ValueError(f"{where} must be a list of [rx, rz] pairs")
        return [[_coerce(float, a, where), _coerce(float, b, where)] for a, b in value]
    raise TypeError(kind)


def _validate(raw, schema, lines, prefix=()):
    out = {}
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"'{'.'.join(prefix)}' must be a mapping", lines.get(prefix))
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key '{'.'.join(prefix + (str(key),))}'",
                              lines.get(prefix + (key,)))
    for key, spec in schema.items():
        path = prefix + (key,)
        if isinstance(spec, dict):
            if key in raw or not prefix:
                out[key] = _validate(raw.get(key), spec, lines, path)
            continue
        kind, default = spec
        if key in raw:
            try:
                out[key] = _coerce(kind, raw[key], ".".join(path))
            except ValueError as exc:
                raise ConfigError(str(exc), lines.get(path)) from None
        else:
            out[key] = default
    return out


def load_config(path, scenario=None, seed=None, out_dir=None):
    """Parse and validate a YAML config, returning the resolved dict.

    ``apparatus_p`` defaults to a copy of ``apparatus``.  Command-line
    ``scenario``, ``seed`` and ``out_dir`` take precedence over the file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, path) from None
    lines = _line_map(node) if node is not None else {}
    try:
        cfg = _validate(raw, SCHEMA, lines)
        if not isinstance(raw, dict) or "apparatus_p" not in raw:
            cfg["apparatus_p"] = dict(cfg["apparatus"])
        if scenario is not None:
            if cfg["scenario"] not in (None, scenario):
                raise ConfigError(f"config is for scenario '{cfg['scenario']}', not '{scenario}'",
                                  lines.get(("scenario",)))
            cfg["scenario"] = scenario
        if cfg["scenario"] not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}",
                              lines.get(("scenario",)))
        if seed is not None:
            cfg["seed"] = int(seed)
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer", lines.get(("seed",)))
        if out_dir is not None:
            cfg["output"]["dir"] = str(out_dir)
        # construct the domain objects now so bad values fail before any work
        for key in ("apparatus", "apparatus_p"):
            try:
                ApparatusParams(**cfg[key])
            except ValueError as exc:
                raise ConfigError(str(exc), lines.get((key,))) from None
        try:
            BlochState(**cfg["spin"])
        except ValueError as exc:
            raise ConfigError(str(exc), lines.get(("spin",))) from None
        if cfg["scenario"] in ("register", "pipeline"):
            try:
                _solver_config(cfg)
            except ValueError as exc:
                raise ConfigError(str(exc), lines.get(("solver",))) from None
    except ConfigError as exc:
        raise ConfigError(str(exc), None, path) from None
    return cfg


def _solver_config(cfg):
    s = cfg["solver"]
    snaps = tuple(s["snapshot_times"]) if s["snapshot_times"] is not None else ()
    return dyn.SolverConfig(t_end=s["t_end"], snapshot_times=snaps, integrator=s["integrator"],
                            dt=s["dt"], dt_factor=s["dt_factor"],
                            allow_unequal_temperatures=s["allow_unequal_temperatures"],
                            frame_transport=s["frame_transport"],
                            clip_tol=s["clip_tol"], drift_tol=s["drift_tol"])


def _apparatus(cfg):
    return ApparatusParams(**cfg["apparatus"]), ApparatusParams(**cfg["apparatus_p"])


# --------------------------------------------------------------- artifacts


def _canon(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(path, cfg, payload):
    """JSON artifact ``{"config", "result", "sha256"}``.

    The digest covers the canonical JSON of ``{"config", "result"}``.
    """
    body = {"config": cfg, "result": payload}
    doc = dict(body, sha256=_sha(_canon(body)))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8", newline="\n")


def read_json(path):
    """Load a JSON artifact and verify its digest."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    body = {"config": doc["config"], "result": doc["result"]}
    if _sha(_canon(body)) != doc["sha256"]:
        raise ValueError(f"{path}: digest mismatch")
    return doc


def write_csv(path, cfg, text, units):
    """CSV artifact: ``#`` metadata lines, header row, data rows.

    The digest covers the header row and data exactly as written.
    """
    head = [f"# cwmeter {cfg['scenario']}", f"# units: {units}",
            f"# config: {_canon(cfg)}", f"# sha256: {_sha(text)}"]
    Path(path).write_text("\n".join(head) + "\n" + text, encoding="utf-8", newline="\n")


def read_csv(path):
    """Return ``(meta, header, rows)`` of a CSV artifact after checking its digest."""
    meta, body = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not body:
                key, _, val = line[2:].rstrip("\n").partition(": ")
                meta[key] = val
            else:
                body.append(line)
    text = "".join(body)
    if _sha(text) != meta.get("sha256"):
        raise ValueError(f"{path}: digest mismatch")
    meta["config"] = json.loads(meta["config"])
    rows = list(csv.reader(io.StringIO(text)))
    return meta, rows[0], rows[1:]


def _rows_csv(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


# --------------------------------------------------------------- scenarios

_ENERGY_UNITS = "energies in units of J4 (hbar = 1)"


def run_landscape(cfg, out):
    A, Ap = _apparatus(cfg)
    l_eq = land.landscape_1d(A, "eq")
    l_up = land.landscape_1d(A, "up")
    l_dn = land.landscape_1d(A, "down")
    rows = zip(l_eq.grid.values, l_eq.F, l_up.F, l_dn.F)
    write_csv(out / "landscape_1d.csv", cfg, _rows_csv(["m", "F_eq", "F_up", "F_down"], rows),
              _ENERGY_UNITS)
    write_csv(out / "landscape_2d.csv", cfg, land.landscape_csv(A, Ap), _ENERGY_UNITS)
    return ["landscape_1d.csv", "landscape_2d.csv"]


def run_thresholds(cfg, out):
    A, Ap = _apparatus(cfg)
    rep = land.classify_regime(A.g, Ap.g, A, Ap)
    single = land.critical_coupling_single(A)
    payload = rep.to_dict()
    payload["single"] = asdict(single)
    payload["joint"] = asdict(land.critical_coupling_joint(A, Ap))
    payload["ratio_h_d_h_c"] = rep.h_d / rep.h_c if rep.h_c else None
    payload["units"] = _ENERGY_UNITS
    write_json(out / "thresholds.json", cfg, _jsonable(payload))
    return ["thresholds.json"]


def run_dephase(cfg, out):
    A, Ap = _apparatus(cfg)
    s = BlochState(**cfg["spin"])
    td = min(dyn.dephasing_time(A), dyn.dephasing_time(Ap))
    if not math.isfinite(td):
        raise ConfigError("dephasing needs a nonzero coupling")
    unit = dyn.tau(A)
    asym = dyn.dephasing_joint_asymptote(s, A, Ap)
    ts = np.linspace(0.0, cfg["dephase"]["t_max"] * td, cfg["dephase"]["n_times"])
    rows = []
    for t in ts:
        num = dyn.dephasing_joint_numeric(float(t), s, A, Ap)
        one = dyn.dephasing_single(float(t), s, A)
        rows.append([t, t / unit, t / td, num.rx, num.ry, num.rz, one.rx, one.ry, one.rz,
                     asym.rx, asym.rz])
    header = ["t", "t_tau", "t_tau_d", "rx_joint", "ry_joint", "rz_joint",
              "rx_single", "ry_single", "rz_single", "rx_asymptote", "rz_asymptote"]
    write_csv(out / "dephase.csv", cfg, _rows_csv(header, rows),
              f"t in model units (hbar/J4); t_tau = t/tau with tau = {unit!r}; "
              f"t_tau_d = t/tau_d with tau_d = {td!r}")
    return ["dephase.csv"]


def _write_register(cfg, out, traj, A, Ap, regime):
    csv_text = dyn.snapshots_csv(traj)
    write_csv(out / "snapshots.csv", cfg, csv_text,
              f"t in units of tau = 1/(gamma J4) = {traj.tau!r} model time units")
    write_json(out / "summary.json", cfg, _jsonable(dyn.run_summary(traj, A, Ap, regime)))


def run_register(cfg, out):
    A, Ap = _apparatus(cfg)
    s = BlochState(**cfg["spin"])
    try:
        regime = land.classify_regime(A.g, Ap.g, A, Ap, with_minima=False).regime
    except land.UnsupportedRegime:
        regime = None
    scfg = _solver_config(cfg)
    try:
        traj = dyn.evolve(init_joint_field(s, A, Ap), A, Ap, scfg)
    except dyn.NumericalAbort as exc:
        _write_register(cfg, out, exc.trajectory, A, Ap, regime)
        raise
    _write_register(cfg, out, traj, A, Ap, regime)
    return ["snapshots.csv", "summary.json"]


def _povm_model(cfg, A, Ap):
    p = cfg["povm"]
    try:
        return povm.measurement_model(A, Ap, lam=p["lambda"], lam_prime=p["lambda_prime"],
                                      alpha_x=p["alpha_x"], alpha_z=p["alpha_z"])
    except ValueError as exc:
        raise ConfigError(f"povm: {exc}") from None


def run_povm(cfg, out):
    A, Ap = _apparatus(cfg)
    s = BlochState(**cfg["spin"])
    model = _povm_model(cfg, A, Ap)
    p = povm.outcome_probabilities(s, model)
    counts = povm.sample_outcomes(p, cfg["povm"]["n_samples"], cfg["seed"])
    est = povm.estimate_bloch(counts, model.lam, model.lam_prime)
    write_json(out / "povm_model.json", cfg, _jsonable(model.to_dict()))
    write_json(out / "povm_samples.json", cfg, _jsonable({
        "probabilities": p.to_dict(), "counts": dict(zip(("pp", "pm", "mp", "mm"), counts)),
        "estimate": est.to_dict(), "truth": {"rx": s.rx, "rz": s.rz}}))
    return ["povm_model.json", "povm_samples.json"]


def run_pipeline(cfg, out):
    A, Ap = _apparatus(cfg)
    s = BlochState(**cfg["spin"])
    scfg = _solver_config(cfg)
    states = [BlochState(rx, 0.0, rz) for rx, rz in cfg["pipeline"]["states"]]
    fit = dyn.response_fit(A, Ap, scfg, states)
    final = dyn.evolve(init_joint_field(s, A, Ap), A, Ap, scfg).final
    thr = (dyn.registration_threshold(A), dyn.registration_threshold(Ap))
    w = dyn.quadrant_weights(final, thr)
    counts = povm.sample_outcomes(w.normalized(), cfg["pipeline"]["n_samples"], cfg["seed"])
    est = povm.estimate_bloch(counts, fit.lambda_, fit.lambda_prime)
    model = povm.measurement_model(A, Ap, lam=fit.lambda_, lam_prime=fit.lambda_prime)
    write_json(out / "pipeline.json", cfg, _jsonable({
        "fit": fit.to_dict(), "model": model.to_dict(), "weights": w.to_dict(),
        "counts": dict(zip(("pp", "pm", "mp", "mm"), counts)),
        "estimate": est.to_dict(), "truth": {"rx": s.rx, "rz": s.rz},
        "t_f_tau": scfg.t_end}))
    return ["pipeline.json"]


RUNNERS = {"landscape": run_landscape, "thresholds": run_thresholds, "dephase": run_dephase,
           "register": run_register, "povm": run_povm, "pipeline": run_pipeline}


def run_scenario(config_path, scenario=None, out_dir=None, seed=None):
    """Validate, run and write artifacts; returns ``(exit_code, files)``."""
    try:
        cfg = load_config(config_path, scenario, seed, out_dir)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, []
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        files = RUNNERS[cfg["scenario"]](cfg, out)
    except ConfigError as exc:
        log.error("%s: %s", config_path, exc)
        return EXIT_CONFIG, []
    except dyn.SolverConfigError as exc:
        log.error("%s: solver: %s", config_path, exc)
        return EXIT_CONFIG, []
    except land.UnsupportedRegime as exc:
        log.error("%s: %s", config_path, exc)
        return EXIT_CONFIG, []
    except dyn.NumericalAbort as exc:
        log.error("numerical abort: %s (partial snapshots written)", exc)
        return EXIT_ABORT, ["snapshots.csv", "summary.json"]
    (out / "timing.json").write_text(
        json.dumps({"scenario": cfg["scenario"], "runtime_s": time.perf_counter() - t0},
                   indent=2) + "\n", encoding="utf-8")
    return EXIT_OK, files


def main(argv=None):
    ap = argparse.ArgumentParser(prog="cwmeter",
                                 description="Curie-Weiss joint measurement scenarios")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed, unsigned 64-bit")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    code, files = run_scenario(args.config, args.scenario, args.out, args.seed)
    for f in files:
        print(f)
    return code


if __name__ == "__main__":
    sys.exit(main())
