"""Command-line front end: ``run``, ``estimate`` and ``make-fixtures``.

Every failure exits nonzero after printing exactly one line of the form
``rtfcbw-error: <Kind>: <message>`` to stderr.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, RtfError
from .estimators import BopOptions, bop_estimate, cbw_estimate, cw_estimate, cwu_estimate
from .evaluation import RAW_FIELDS, ExperimentConfig, run_experiment
from .scenario import ArrayGeometry, ScenarioConfig, position_grid, render_scenario
from .stft import StftConfig, sample_covariance, synthesize, write_wav

log = logging.getLogger("rtfcbw")

OUTPUT_DIR_ENV = "RTFCBW_OUTPUT_DIR"
ERROR_PREFIX = "rtfcbw-error"
FIXTURE_ROLES = ("R_y3", "R_n", "R_v2", "g", "h")


# --- configuration --------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    output_dir: str = "results"
    format: str = "csv"


_GEOMETRY_KEYS = {"mic_positions", "n_mics", "spacing", "center", "reference_index", "speed_of_sound"}
_EXPERIMENT_KEYS = {"snr_grid", "sir_grid", "position_pairs", "pair_indices", "methods",
                    "references", "trials_seed"}
_TOP_KEYS = {"scenario", "experiment", "stft", "bop", "beamformer", "output_dir", "format"}


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    for key in data:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown key {name!r}")


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, data, where, skip=()):
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    _check_keys(data, names, where)
    try:
        return cls(**{k: _tuplify(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _build_geometry(data):
    _check_keys(data, _GEOMETRY_KEYS, "scenario.geometry")
    d = dict(data)
    try:
        if "mic_positions" in d:
            extra = {"n_mics", "spacing", "center"} & set(d)
            if extra:
                raise ConfigError(f"scenario.geometry: mic_positions excludes {sorted(extra)}")
            return ArrayGeometry(_tuplify(d["mic_positions"]), d.get("reference_index", 0),
                                 d.get("speed_of_sound", 343.0))
        geo = ArrayGeometry.linear(d.get("n_mics", 4), d.get("spacing", 0.02),
                                   tuple(d.get("center", (3.5, 3.0, 1.3))),
                                   d.get("reference_index", 0))
        if "speed_of_sound" in d:
            geo = dataclasses.replace(geo, speed_of_sound=float(d["speed_of_sound"]))
        return geo
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario.geometry: {exc}") from exc


def default_pair_indices(n_positions=9):
    """All ordered, non-collocated pairs of grid positions (72 for a 3x3 grid)."""
    return tuple((i, j) for i in range(n_positions) for j in range(n_positions) if i != j)


def parse_config(data, seed=None, output_dir=None, fmt=None, env=None):
    """Turn a config mapping into a :class:`RunConfig`; flags override file values."""
    env = os.environ if env is None else env
    _check_keys(data, _TOP_KEYS, "")
    scen_data = dict(data.get("scenario", {}))
    _check_keys(scen_data, {f.name for f in dataclasses.fields(ScenarioConfig)}, "scenario")
    geometry = _build_geometry(scen_data.pop("geometry", {}))
    scenario = _build(ScenarioConfig, dict(scen_data, geometry=geometry), "scenario")
    stft = _build(StftConfig, data.get("stft", {}), "stft")
    bop = _build(BopOptions, data.get("bop", {}), "bop")
    bf = data.get("beamformer", {})
    _check_keys(bf, {"delta_db"}, "beamformer")

    exp = dict(data.get("experiment", {}))
    _check_keys(exp, _EXPERIMENT_KEYS, "experiment")
    if "position_pairs" in exp and "pair_indices" in exp:
        raise ConfigError("experiment: give either position_pairs or pair_indices, not both")
    if "position_pairs" in exp:
        pairs = _tuplify(exp.pop("position_pairs"))
    else:
        grid = position_grid(geometry)
        idx = exp.pop("pair_indices", None)
        idx = default_pair_indices(len(grid)) if idx is None else _tuplify(idx)
        try:
            pairs = tuple((grid[i], grid[j]) for i, j in idx)
        except (IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"experiment.pair_indices: {exc}") from exc
    if seed is not None:
        exp["trials_seed"] = int(seed)
    try:
        experiment = ExperimentConfig(
            position_pairs=pairs, scenario=scenario, stft=stft, bop=bop,
            delta_db=float(bf.get("delta_db", -40.0)),
            **{k: _tuplify(v) for k, v in exp.items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment: {exc}") from exc

    out = output_dir or data.get("output_dir") or env.get(OUTPUT_DIR_ENV) or "results"
    fmt = fmt or data.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {fmt!r}")
    return RunConfig(experiment=experiment, output_dir=str(out), format=fmt)


def load_config(path, **overrides):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, **overrides)


# --- result files ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_num(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_results(summary, raw, out_dir):
    """Write ``raw.csv``, ``summary.csv``, ``summary.json`` and ``fig_sinr.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "raw.csv").write_text(_csv_text(RAW_FIELDS, [[d[k] for k in RAW_FIELDS] for d in raw]))
    fields = [f.name for f in dataclasses.fields(summary[0])] if summary else [
        "method", "snr_db", "mean_delta_sinr_db", "std_delta_sinr_db", "n", "n_failed"]
    (out / "summary.csv").write_text(
        _csv_text(fields, [[getattr(s, k) for k in fields] for s in summary]))
    payload = [{k: _json_num(getattr(s, k)) for k in fields} for s in summary]
    (out / "summary.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / "fig_sinr.csv").write_text(_csv_text(
        ("method", "snr_db", "mean_db", "std_db"),
        [(s.method, s.snr_db, s.mean_delta_sinr_db, s.std_delta_sinr_db) for s in summary]))
    return out


def cmd_run(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir, fmt=args.format)

    def progress(done, total):
        log.info("cell %d/%d", done, total)

    summary, raw = run_experiment(cfg.experiment, jobs=args.jobs, progress=progress)
    write_results(summary, raw, cfg.output_dir)
    if cfg.format == "json":
        print(json.dumps([{k: _json_num(v) for k, v in dataclasses.asdict(s).items()}
                          for s in summary], indent=2))
    else:
        print(_csv_text(("method", "snr_db", "mean_db", "std_db", "n", "n_failed"),
                        [(s.method, s.snr_db, s.mean_delta_sinr_db, s.std_delta_sinr_db,
                          s.n, s.n_failed) for s in summary]), end="")
    return 0


# --- fixtures -------------------------------------------------------------------


def array_to_fixture(a, role):
    """Serialize a matrix ``(rows, cols)``, a vector ``(rows,)`` or a per-bin stack."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 1:
        a = a[:, None]
    doc = {"role": role, "rows": int(a.shape[-2]), "cols": int(a.shape[-1])}
    if a.ndim == 3:
        doc["bins"] = int(a.shape[0])
    doc["real"] = a.real.tolist()
    doc["imag"] = a.imag.tolist()
    return doc


def fixture_to_array(doc):
    """Inverse of :func:`array_to_fixture`. Vectors (``cols == 1``) come back 1-D per bin."""
    try:
        a = np.asarray(doc["real"], dtype=float) + 1j * np.asarray(doc["imag"], dtype=float)
        rows, cols = int(doc["rows"]), int(doc["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed fixture: {exc}") from exc
    if a.shape[-2:] != (rows, cols) or a.ndim not in (2, 3):
        raise ConfigError(f"fixture shape {a.shape} does not match header {rows}x{cols}")
    if doc.get("role") not in FIXTURE_ROLES:
        raise ConfigError(f"fixture role must be one of {FIXTURE_ROLES}, got {doc.get('role')!r}")
    return a[..., 0] if cols == 1 else a


def read_fixture(path):
    with open(path) as fh:
        doc = json.load(fh)
    return doc.get("role"), fixture_to_array(doc)


def write_fixture(path, a, role):
    Path(path).write_text(json.dumps(array_to_fixture(a, role)) + "\n")


def _random_rtf(rng, M, r):
    v = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    return v / v[r]


def oracle_fixture_set(n_mics=4, seed=0, reference=0, noise_scale=1.0, kind="dual"):
    """Random oracle covariances following the successive-speaker model.

    ``kind="dual"`` gives ``R_y3 = phi_x h h^H + phi_u3 g g^H + R_n`` and
    ``R_v2 = phi_u2 g g^H + R_n``; ``kind="noise-only"`` sets every speaker
    PSD to zero so that ``R_v2 = R_y3 = R_n``.
    """
    rng = np.random.default_rng(seed)
    M = n_mics
    h = _random_rtf(rng, M, reference)
    g = _random_rtf(rng, M, reference)
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    R_n = noise_scale * (A @ A.conj().T / M + 0.1 * np.eye(M))
    phi_x, phi_u2, phi_u3 = rng.uniform(0.1, 10.0, 3)
    if kind == "noise-only":
        phi_x = phi_u2 = phi_u3 = 0.0
    elif kind != "dual":
        raise ConfigError(f"unknown fixture kind {kind!r}")
    gg = np.outer(g, g.conj())
    R_v2 = phi_u2 * gg + R_n
    R_y3 = phi_x * np.outer(h, h.conj()) + phi_u3 * gg + R_n
    return {"R_y3": R_y3, "R_n": R_n, "R_v2": R_v2, "g": g, "h": h}


def cmd_make_fixtures(args):
    out = Path(args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "fixtures")
    out.mkdir(parents=True, exist_ok=True)
    if args.scene:
        cfg = load_config(args.scene, seed=args.seed)
        scen = cfg.experiment.scenario
        if args.seed is not None:
            scen = dataclasses.replace(scen, seed=int(args.seed))
        stft = cfg.experiment.stft
        mix, truth, schedule = render_scenario(scen, stft)
        covs = {
            "R_n": sample_covariance(mix, schedule.segment(1)),
            "R_v2": sample_covariance(mix, schedule.segment(2)),
            "R_y3": sample_covariance(mix, schedule.segment(3)),
            "g": truth.g,
            "h": truth.h,
        }
        write_wav(out / "mix.wav", synthesize(mix, stft, truth.n_samples), stft.sample_rate)
    else:
        seed = 0 if args.seed is None else int(args.seed)
        covs = oracle_fixture_set(args.n_mics, seed, args.reference, args.noise_scale, args.kind)
    for role, a in covs.items():
        write_fixture(out / f"{role}.json", a, role)
    print(json.dumps({"output_dir": str(out), "files": sorted(f"{k}.json" for k in covs)}))
    return 0


# --- estimate -------------------------------------------------------------------


_NEEDS = {
    "CW": ("R_v2", "R_n"),
    "CWu": ("R_y3", "R_v2"),
    "BOP": ("R_y3", "g"),
    "CBW": ("R_y3", "R_n", "g"),
}


def _complex_json(a):
    a = np.asarray(a)
    return {"real": a.real.tolist(), "imag": a.imag.tolist()}


def _with_method(method, exc):
    msg = exc.args[0] if exc.args else ""
    if not msg.startswith(method):
        exc.args = (f"{method}: {msg}",)
    return exc


def estimate(method, inputs, r, bop_opts=BopOptions()):
    """Run one estimator on role-tagged inputs; returns a JSON-ready dict."""
    if method not in _NEEDS:
        raise ConfigError(f"method must be one of {sorted(_NEEDS)}, got {method!r}")
    inputs = dict(inputs)
    if method in ("BOP", "CBW") and "g" not in inputs and {"R_v2", "R_n"} <= set(inputs):
        inputs["g"] = cw_estimate(inputs["R_v2"], inputs["R_n"], r)
    missing = [k for k in _NEEDS[method] if k not in inputs]
    if missing:
        raise ConfigError(f"{method} needs inputs {list(_NEEDS[method])}, missing {missing}")
    result = {"method": method, "reference": r}
    try:
        if method == "CW":
            est = cw_estimate(inputs["R_v2"], inputs["R_n"], r)
        elif method == "CWu":
            est = cwu_estimate(inputs["R_y3"], inputs["R_v2"], r)
        elif method == "BOP":
            init = cwu_estimate(inputs["R_y3"], inputs["R_v2"], r) if "R_v2" in inputs else None
            sol = bop_estimate(inputs["R_y3"], inputs["g"], r, bop_opts, init=init)
            est = sol.estimate
            result["objective"] = np.asarray(sol.objective).tolist()
            result["converged"] = np.asarray(sol.converged).tolist()
        else:
            sol = cbw_estimate(inputs["R_y3"], inputs["R_n"], inputs["g"], r)
            est = sol.estimate
            result["alpha"] = _complex_json(sol.alpha)
            result["sigma_ratio"] = np.asarray(sol.sigma_ratio).tolist()
    except RtfError as exc:
        raise _with_method(method, exc)
    result["estimate"] = _complex_json(est)
    return result


def cmd_estimate(args):
    inputs = {}
    if args.scene:
        cfg = load_config(args.scene, seed=args.seed)
        scen = cfg.experiment.scenario
        if args.seed is not None:
            scen = dataclasses.replace(scen, seed=int(args.seed))
        mix, truth, schedule = render_scenario(scen, cfg.experiment.stft)
        inputs["R_n"] = sample_covariance(mix, schedule.segment(1))
        inputs["R_v2"] = sample_covariance(mix, schedule.segment(2))
        inputs["R_y3"] = sample_covariance(mix, schedule.segment(3))
        bop_opts = cfg.experiment.bop
    else:
        bop_opts = BopOptions()
    for path in args.input or ():
        role, a = read_fixture(path)
        inputs[role] = a
    inputs.pop("h", None)
    print(json.dumps(estimate(args.method, inputs, args.reference, bop_opts)))
    return 0


# --- entry point ----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rtfcbw", description="RTF estimation for successive speakers")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the Monte-Carlo experiment")
    run.add_argument("config", help="JSON config file")
    run.add_argument("--seed", type=int, help="overrides experiment.trials_seed")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--output-dir", help=f"result directory (default: ${OUTPUT_DIR_ENV} or ./results)")
    run.add_argument("--format", choices=("csv", "json"), help="summary format on stdout")
    run.set_defaults(func=cmd_run)

    est = sub.add_parser("estimate", help="estimate an RTF from covariance fixtures or a scene")
    est.add_argument("--method", required=True, choices=sorted(_NEEDS))
    est.add_argument("--input", action="append", help="role-tagged fixture file (repeatable)")
    est.add_argument("--scene", help="JSON config; sample covariances of its scenario are used")
    est.add_argument("--reference", type=int, default=0)
    est.add_argument("--seed", type=int, help="scenario seed when --scene is given")
    est.set_defaults(func=cmd_estimate)

    fx = sub.add_parser("make-fixtures", help="write covariance fixtures (and a mix WAV with --scene)")
    fx.add_argument("--output-dir")
    fx.add_argument("--n-mics", type=int, default=4)
    fx.add_argument("--reference", type=int, default=0)
    fx.add_argument("--noise-scale", type=float, default=1.0)
    fx.add_argument("--kind", choices=("dual", "noise-only"), default="dual")
    fx.add_argument("--scene", help="JSON config; write per-bin sample covariances and mix.wav")
    fx.add_argument("--seed", type=int)
    fx.set_defaults(func=cmd_make_fixtures)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except RtfError as exc:
        kind, msg = type(exc).__name__, str(exc)
    except json.JSONDecodeError as exc:
        kind, msg = "ConfigError", f"invalid JSON: {exc}"
    except OSError as exc:
        kind, msg = "IoError", f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": ")
    msg = " ".join(msg.split())
    print(f"{ERROR_PREFIX}: {kind}: {msg}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
