"""SINR-improvement metric and the Monte-Carlo experiment runner.

One *cell* is a rendered scene for a (position pair, SIR, SNR) triple. For
every reference microphone and every method the cell produces one raw row.
Aggregates are mean and (population) standard deviation of the SINR
improvement per (method, SNR) over positions, SIRs and references.
"""

import concurrent.futures
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .beamformer import apply_beamformer, db_to_linear, lcmv_weights
from .errors import DimensionMismatch, NotConverged, RtfError, ZeroPower
from .estimators import BopOptions, bop_estimate, cbw_estimate, cw_estimate, cwu_estimate
from .scenario import ScenarioConfig, oracle_covariances, render_scenario
from .stft import StftConfig, sample_covariance, synthesize

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "ResultRow",
    "ShadowOutputs",
    "sinr_improvement",
    "shadow_filter",
    "estimate_target_rtf",
    "evaluate_cell",
    "run_experiment",
    "aggregate",
]

METHODS = ("CWu", "BOP", "CBW")
RAW_FIELDS = ("pair", "sir_db", "snr_db", "reference", "method", "delta_sinr_db", "error")


@dataclass(frozen=True)
class ExperimentConfig:
    snr_grid: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0)
    sir_grid: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0)
    position_pairs: tuple = ()
    methods: tuple = METHODS
    references: tuple = None  # None: every microphone
    trials_seed: int = 0
    delta_db: float = -40.0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    bop: BopOptions = field(default_factory=BopOptions)

    def __post_init__(self):
        if not self.snr_grid or not self.sir_grid:
            raise ValueError("snr_grid and sir_grid must be non-empty")
        unknown = set(self.methods) - set(METHODS) - {"oracle"}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        for t, i in self.position_pairs:
            if np.allclose(t, i):
                raise ValueError(f"collocated position pair {t}")


@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    mean_delta_sinr_db: float
    std_delta_sinr_db: float
    n: int
    n_failed: int = 0


@dataclass
class ShadowOutputs:
    x_in: np.ndarray
    v_in: np.ndarray
    x_out: np.ndarray
    v_out: np.ndarray


def _power(x):
    return float(np.sum(np.abs(np.asarray(x)) ** 2))


def sinr_improvement(x_in, v_in, x_out, v_out):
    """Broadband SINR improvement in dB between filter output and input."""
    if not (len(x_in) == len(v_in) == len(x_out) == len(v_out)):
        raise DimensionMismatch("all four sequences must have equal length")
    px_in, pv_in, px_out, pv_out = map(_power, (x_in, v_in, x_out, v_out))
    if min(px_in, pv_in, px_out, pv_out) <= 0.0:
        raise ZeroPower("a component has zero power")
    return 10 * math.log10(px_out / pv_out) - 10 * math.log10(px_in / pv_in)


def shadow_filter(w, truth, schedule=None, reference=None):
    """Filter target and undesired components separately with the same weights.

    Returns time-domain reference inputs and beamformer outputs, restricted
    to the dual-speaker samples when a schedule is given.
    """
    r = truth.reference_index if reference is None else reference
    X = truth.x
    V = truth.u + truth.n
    z_x = apply_beamformer(w, X)
    z_v = apply_beamformer(w, V)
    cfg, n = truth.stft, truth.n_samples
    out = ShadowOutputs(
        x_in=synthesize(X[..., r], cfg, n),
        v_in=synthesize(V[..., r], cfg, n),
        x_out=synthesize(z_x, cfg, n),
        v_out=synthesize(z_v, cfg, n),
    )
    if schedule is not None:
        seg = schedule.segment_samples(3)
        sl = slice(seg.start, seg.stop)
        out = ShadowOutputs(out.x_in[sl], out.v_in[sl], out.x_out[sl], out.v_out[sl])
    return out


def estimate_target_rtf(method, R_y3, R_n, R_v2, g, r, bop_opts=BopOptions(), truth_h=None):
    if method == "CWu":
        return cwu_estimate(R_y3, R_v2, r)
    if method == "CBW":
        return cbw_estimate(R_y3, R_n, g, r).estimate
    if method == "BOP":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            return bop_estimate(R_y3, g, r, bop_opts, init=cwu_estimate(R_y3, R_v2, r)).estimate
    if method == "oracle":
        return truth_h / truth_h[..., r : r + 1]
    raise ValueError(f"unknown method {method!r}")


def evaluate_cell(mix, truth, schedule, methods=METHODS, references=None, delta_db=-40.0,
                  bop_opts=BopOptions(), oracle=False):
    """Run every (reference, method) combination on one rendered scene.

    With ``oracle=True`` the model covariances and the true interferer RTF
    replace the sample estimates. Returns a list of dicts with keys
    ``reference, method, delta_sinr_db, error``.
    """
    M = mix.shape[-1]
    references = range(M) if references is None else references
    if oracle:
        R_n = oracle_covariances(truth, segment=1)["R_n"]
        R_v2 = oracle_covariances(truth, segment=2)["R_y"]
        R_y3 = oracle_covariances(truth, segment=3)["R_y"]
    else:
        R_n = sample_covariance(mix, schedule.segment(1))
        R_v2 = sample_covariance(mix, schedule.segment(2))
        R_y3 = sample_covariance(mix, schedule.segment(3))
    delta = db_to_linear(delta_db)
    rows = []
    for r in references:
        try:
            g = truth.g / truth.g[:, r : r + 1] if oracle else cw_estimate(R_v2, R_n, r)
        except RtfError as exc:
            rows += [dict(reference=r, method=m, delta_sinr_db=float("nan"),
                          error=f"{type(exc).__name__}: {exc}") for m in methods]
            continue
        for m in methods:
            try:
                h = estimate_target_rtf(m, R_y3, R_n, R_v2, g, r, bop_opts, truth.h)
                w = lcmv_weights(h, g, R_n, delta, r)
                sh = shadow_filter(w, truth, schedule, r)
                val = sinr_improvement(sh.x_in, sh.v_in, sh.x_out, sh.v_out)
                rows.append(dict(reference=r, method=m, delta_sinr_db=val, error=""))
            except RtfError as exc:
                rows.append(dict(reference=r, method=m, delta_sinr_db=float("nan"),
                                 error=f"{type(exc).__name__}: {exc}"))
    return rows


def cell_seed(trials_seed, pair_index, sir_index):
    """Scene seed; shared across the SNR grid so SNR conditions are paired."""
    return int(np.random.SeedSequence([trials_seed, pair_index, sir_index]).generate_state(1)[0])


def _run_cell(args):
    cfg, pi, si, snr = args
    target, interferer = cfg.position_pairs[pi]
    scen = replace(cfg.scenario, target_position=tuple(target), interferer_position=tuple(interferer),
                   snr_db=float(snr), sir_db=float(cfg.sir_grid[si]),
                   seed=cell_seed(cfg.trials_seed, pi, si))
    base = dict(pair=pi, sir_db=float(cfg.sir_grid[si]), snr_db=float(snr))
    try:
        mix, truth, schedule = render_scenario(scen, cfg.stft)
    except RtfError as exc:
        refs = cfg.references if cfg.references is not None else range(scen.geometry.n_mics)
        return [dict(base, reference=r, method=m, delta_sinr_db=float("nan"),
                     error=f"{type(exc).__name__}: {exc}") for r in refs for m in cfg.methods]
    rows = evaluate_cell(mix, truth, schedule, cfg.methods, cfg.references, cfg.delta_db, cfg.bop)
    return [dict(base, **row) for row in rows]


def run_experiment(cfg, jobs=1, progress=None):
    """Run the full grid; returns ``(aggregate rows, raw rows)``.

    Cells are independent and seeded from ``cfg.trials_seed`` and their grid
    position only, so the tables do not depend on ``jobs``.
    """
    tasks = [(cfg, pi, si, snr)
             for pi in range(len(cfg.position_pairs))
             for si in range(len(cfg.sir_grid))
             for snr in cfg.snr_grid]
    raw = []
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, rows in enumerate(pool.map(_run_cell, tasks)):
                raw.extend(rows)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            raw.extend(_run_cell(task))
            if progress:
                progress(i + 1, len(tasks))
    method_order = {m: k for k, m in enumerate(cfg.methods)}
    raw.sort(key=lambda d: (d["snr_db"], d["pair"], d["sir_db"], d["reference"], method_order[d["method"]]))
    return aggregate(raw, cfg.methods, cfg.snr_grid), raw


def aggregate(raw, methods, snr_grid):
    """Mean/std per (method, SNR) over successful raw rows."""
    out = []
    for m in methods:
        for snr in snr_grid:
            cell = [d for d in raw if d["method"] == m and d["snr_db"] == float(snr)]
            if not cell:
                continue
            vals = np.array([d["delta_sinr_db"] for d in cell if not d["error"]], dtype=float)
            n_failed = len(cell) - len(vals)
            if len(vals):
                mean, std = float(np.mean(vals)), float(np.std(vals))
            else:
                mean = std = float("nan")
            out.append(ResultRow(m, float(snr), mean, std, len(vals), n_failed))
    return out
