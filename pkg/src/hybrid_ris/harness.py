"""Monte Carlo experiment runner: specs, presets, seeding and result files."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .dictionary import DictionarySet, build_dictionaries
from .estimators import (EstimatorConfig, omp_baseline, oracle_ls, sbl_baseline,
                         tsjbe)
from .geometry import MarkovVRPrior, SystemGeometry, observe, sample_paths, sample_vr, synthesize_channel
from .io import TraceRecorder

log = logging.getLogger(__name__)

SWEEPS = ("snr_db", "pilots", "vr_sparsity", "iterations")
ESTIMATORS = ("tsjbe", "tsjbe_novr", "omp", "sbl", "oracle")
PRESETS = ("fig2-convergence", "fig3-snr", "fig4-pilots", "fig5-vr-sparsity")

# flat key = value defaults; presets and user files override these
BASE_CONFIG = """\
[experiment]
name = custom
sweep = snr_db
values = 0, 10, 20
trials = 100
estimators = tsjbe, tsjbe_novr, omp, sbl, oracle
seed = 0
workers = 1

[geometry]
M = 8
N = 32
K = 4
n_angles = 64
n_rings = 1
L_U = 3
L_RB = 3

[defaults]
snr_db = 20
pilots = 32
vr_sparsity = 0.875
I_out = 30
"""

PAPER_SCALE = {"M": 16, "N": 128, "K": 8, "n_angles": 128, "n_rings": 2, "pilots": 64}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "custom"
    sweep: str = "snr_db"
    values: tuple = (0.0, 10.0, 20.0)
    trials: int = 100
    estimators: tuple = ESTIMATORS
    seed: int = 0
    workers: int = 1
    M: int = 8
    N: int = 32
    K: int = 4
    n_angles: int = 64
    n_rings: int = 1
    L_U: int = 3
    L_RB: int = 3
    snr_db: float = 20.0
    pilots: int = 32
    vr_sparsity: float = 0.875
    I_out: int = 30

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep variable {self.sweep!r}; expected one of {SWEEPS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if len(self.values) == 0:
            raise ValueError("empty sweep")
        diffs = np.diff(np.asarray(self.values, dtype=float))
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(f"sweep values must be strictly monotone, got {self.values}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def geometry(self) -> SystemGeometry:
        return SystemGeometry(M=self.M, N=self.N, K=self.K)

    def paper_scale(self) -> "ExperimentSpec":
        """Same experiment at the full array sizes (pilot sweeps keep their values)."""
        over = dict(PAPER_SCALE)
        if self.sweep == "pilots":
            over.pop("pilots")
        return replace(self, **over)

    def point(self, value: float) -> dict:
        """Scenario parameters at one sweep value."""
        p = {"snr_db": self.snr_db, "pilots": self.pilots, "vr_sparsity": self.vr_sparsity,
             "I_out": self.I_out}
        if self.sweep == "iterations":
            p["I_out"] = int(max(self.values))
        else:
            p[self.sweep] = value
        p["pilots"] = int(p["pilots"])
        return p


def _parse_list(text: str, cast):
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip())


def _spec_from_parser(cp: configparser.ConfigParser) -> ExperimentSpec:
    kw = {}
    types = {f.name: f.type for f in fields(ExperimentSpec)}
    for section in cp.sections():
        for key, raw in cp.items(section):
            name = {"m": "M", "n": "N", "k": "K", "l_u": "L_U", "l_rb": "L_RB",
                    "i_out": "I_out"}.get(key, key)
            if name not in types:
                raise ValueError(f"unknown key [{section}] {key}")
            if name == "values":
                kw[name] = _parse_list(raw, float)
            elif name == "estimators":
                kw[name] = _parse_list(raw, str)
            elif types[name] in ("int", int):
                kw[name] = int(raw)
            elif types[name] in ("float", float):
                kw[name] = float(raw)
            else:
                kw[name] = raw.strip()
    return ExperimentSpec(**kw)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str.lower
    cp.read_string(BASE_CONFIG)
    return cp


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return resources.files("hybrid_ris").joinpath("presets", f"{name}.ini").read_text()


def load_spec(path: str | os.PathLike | None = None, preset: str | None = None,
              **overrides) -> ExperimentSpec:
    """Base config, then the preset, then the file at ``path``, then keyword overrides."""
    cp = _parser()
    if preset is not None:
        cp.read_string(preset_text(preset))
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    spec = _spec_from_parser(cp)
    return replace(spec, **{k: v for k, v in overrides.items() if v is not None})


def spec_to_ini(spec: ExperimentSpec) -> str:
    """Inverse of :func:`load_spec` for a fully specified experiment."""
    d = asdict(spec)
    lines = ["[experiment]"]
    for key in ("name", "sweep", "values", "trials", "estimators", "seed", "workers"):
        v = d[key]
        lines.append(f"{key} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
    lines.append("")
    lines.append("[geometry]")
    for key in ("M", "N", "K", "n_angles", "n_rings", "L_U", "L_RB"):
        lines.append(f"{key} = {d[key]}")
    lines.append("")
    lines.append("[defaults]")
    for key in ("snr_db", "pilots", "vr_sparsity", "I_out"):
        lines.append(f"{key} = {d[key]}")
    return "\n".join(lines) + "\n"


# -- trials ----------------------------------------------------------------------


def trial_seed(master: int, sweep_index: int, trial: int) -> np.random.SeedSequence:
    """Independent stream per (sweep point, trial); does not depend on execution order."""
    return np.random.SeedSequence([int(master), int(sweep_index), int(trial)])


def channel_seeds(master: int, trial: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Path and visibility streams of one trial, shared by every sweep point.

    Reusing the channel across the sweep (common random numbers) makes the
    differences between neighbouring points far less noisy than the points.
    """
    return tuple(np.random.SeedSequence([int(master), int(trial)], spawn_key=(k,)) for k in (0, 1))


@lru_cache(maxsize=4)
def _dictionaries(M: int, N: int, K: int, n_angles: int, n_rings: int) -> DictionarySet:
    return build_dictionaries(SystemGeometry(M=M, N=N, K=K), n_angles=n_angles, n_rings=n_rings)


def _run_estimator(name: str, obs, ch, dset: DictionarySet, spec: ExperimentSpec, point: dict,
                   trace_stem: Path | None = None):
    h = ch.h_cascaded
    if name in ("tsjbe", "tsjbe_novr"):
        cfg = EstimatorConfig(I_out=point["I_out"], n_paths=spec.L_U * spec.L_RB,
                              markov=MarkovVRPrior.from_sparsity(point["vr_sparsity"]),
                              enable_vr=name == "tsjbe")
        if trace_stem is None:
            return tsjbe(obs, dset, cfg, h_true=h)
        trace_stem.parent.mkdir(parents=True, exist_ok=True)
        with ExitStack() as stack:
            sinks = [stack.enter_context(open(f"{trace_stem}_{kind}.csv", "w", newline=""))
                     for kind in ("gain", "vr", "refine")]
            return tsjbe(obs, dset, cfg, h_true=h, recorder=TraceRecorder(*sinks))
    if name == "omp":
        return omp_baseline(obs, dset, spec.L_U * spec.L_RB, h_true=h)
    if name == "sbl":
        return sbl_baseline(obs, dset, h_true=h)
    return oracle_ls(obs, ch, dset.geom, h_true=h)


def run_trial(spec: ExperimentSpec, sweep_index: int, trial: int,
              trace_dir: str | os.PathLike | None = None) -> list[dict]:
    """All estimator rows for one trial.

    For the iteration sweep ``sweep_index`` is ignored: one instance is solved
    once and the per-iteration NMSE trace supplies every sweep value.
    Estimators without a trace repeat their final NMSE. With ``trace_dir``
    the TS-JBE variants write their module diagnostics there as
    ``<estimator>_p<point>_t<trial>_{gain,vr,refine}.csv``.
    """
    geom = spec.geometry
    dset = _dictionaries(spec.M, spec.N, spec.K, spec.n_angles, spec.n_rings)
    values = spec.values if spec.sweep == "iterations" else (spec.values[sweep_index],)
    point = spec.point(values[0])
    rng = np.random.default_rng(trial_seed(spec.seed, 0 if spec.sweep == "iterations" else sweep_index,
                                           trial))
    path_seed, vr_seed = channel_seeds(spec.seed, trial)
    markov = MarkovVRPrior.from_sparsity(point["vr_sparsity"])
    paths = sample_paths(geom, spec.L_U, spec.L_RB, np.random.default_rng(path_seed))
    vr = sample_vr(geom, spec.L_U, markov, np.random.default_rng(vr_seed))
    ch = synthesize_channel(geom, paths, vr)
    obs = observe(ch, point["pilots"], point["snr_db"], rng)
    rows = []
    for name in spec.estimators:
        t0 = time.perf_counter()
        try:
            stem = None if trace_dir is None else Path(trace_dir) / f"{name}_p{sweep_index}_t{trial}"
            res = _run_estimator(name, obs, ch, dset, spec, point, stem)
            nmse, ok, msg = float(res.nmse), bool(res.converged), res.message
            trace = [r["nmse"] for r in res.iteration_trace if "nmse" in r]
        except (np.linalg.LinAlgError, FloatingPointError, ValueError, RuntimeError) as exc:
            log.warning("%s failed on trial %d: %s", name, trial, exc)
            nmse, ok, msg, trace = math.nan, False, str(exc), []
        wall = time.perf_counter() - t0
        for v in values:
            val = nmse
            if spec.sweep == "iterations" and trace:
                val = float(trace[min(int(v), len(trace)) - 1])
            rows.append({"estimator": name, "value": float(v), "trial": trial, "nmse": val,
                         "converged": ok, "message": msg, "wall_time": wall})
    return rows


def _task(args):
    spec, i, t, trace_dir = args
    return (i, t), run_trial(spec, i, t, trace_dir)


@dataclass
class ResultTable:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)

    def aggregate(self) -> list[dict]:
        """Mean NMSE (linear and dB), standard deviation and failure count per point."""
        out = []
        for name in self.spec.estimators:
            for v in self.spec.values:
                sel = [r for r in self.rows if r["estimator"] == name and r["value"] == float(v)]
                vals = np.array([r["nmse"] for r in sel if np.isfinite(r["nmse"])])
                n = len(vals)
                mean = float(np.mean(vals)) if n else math.nan
                std = float(np.std(vals, ddof=1)) if n > 1 else 0.0
                out.append({"estimator": name, "value": float(v), "n": n,
                            "n_failed": sum(not r["converged"] for r in sel),
                            "mean_nmse": mean,
                            "mean_nmse_db": 10 * math.log10(mean) if n and mean > 0 else math.nan,
                            "std_nmse": std, "sem_nmse": std / math.sqrt(n) if n else math.nan})
        return out

    def mean(self, estimator: str, value: float) -> float:
        for r in self.aggregate():
            if r["estimator"] == estimator and r["value"] == float(value):
                return r["mean_nmse"]
        raise KeyError((estimator, value))


def run_experiment(spec: ExperimentSpec, progress=None,
                   trace_dir: str | os.PathLike | None = None) -> ResultTable:
    """Run every (sweep point, trial); rows come back sorted by (point, trial, estimator order)."""
    points = [0] if spec.sweep == "iterations" else range(len(spec.values))
    tasks = [(spec, i, t, trace_dir) for i in points for t in range(spec.trials)]
    results = {}
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for key, rows in pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * spec.workers))):
                results[key] = rows
                if progress:
                    progress(len(results), len(tasks))
    else:
        for task in tasks:
            key, rows = _task(task)
            results[key] = rows
            if progress:
                progress(len(results), len(tasks))
    table = ResultTable(spec)
    for key in sorted(results):
        table.rows.extend(results[key])
    return table


# -- result files ----------------------------------------------------------------

RAW_SCHEMA = (("estimator", "str"), ("value", "float"), ("trial", "int"), ("nmse", "float"),
              ("converged", "bool"), ("message", "str"))
AGG_SCHEMA = (("estimator", "str"), ("value", "float"), ("n", "int"), ("n_failed", "int"),
              ("mean_nmse", "float"), ("mean_nmse_db", "float"), ("std_nmse", "float"),
              ("sem_nmse", "float"))
TIMING_SCHEMA = (("estimator", "str"), ("value", "float"), ("trial", "int"), ("wall_time", "float"))


def _fmt(v, kind: str) -> str:
    if kind == "float":
        return repr(float(v))
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


def _parse(v: str, kind: str):
    if kind == "float":
        return float(v)
    if kind == "int":
        return int(v)
    if kind == "bool":
        return v == "true"
    return v


def _schema_line(schema) -> str:
    return "# schema: " + ",".join(f"{n}:{k}" for n, k in schema)


def _write(path: Path, rows: list[dict], schema, fmt: str) -> None:
    buf = io.StringIO(newline="")
    if fmt == "csv":
        buf.write(_schema_line(schema) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([n for n, _ in schema])
        for r in rows:
            w.writerow([_fmt(r[n], k) for n, k in schema])
    elif fmt == "jsonlines":
        buf.write(json.dumps({"schema": dict(schema)}) + "\n")
        for r in rows:
            obj = {n: (None if k == "float" and not math.isfinite(r[n]) else r[n]) for n, k in schema}
            buf.write(json.dumps(obj, allow_nan=False) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def emit(table: ResultTable, out_dir: str | os.PathLike, fmt: str = "csv",
         timing: bool = False) -> dict[str, Path]:
    """Write raw and aggregate files plus the resolved spec, and optionally wall times.

    Everything except ``timing`` is byte-identical for identical inputs.
    """
    out = Path(out_dir)
    ext = "csv" if fmt == "csv" else "jsonl"
    paths = {"raw": out / f"raw.{ext}", "aggregate": out / f"aggregate.{ext}", "spec": out / "spec.ini"}
    _write(paths["raw"], table.rows, RAW_SCHEMA, fmt)
    _write(paths["aggregate"], table.aggregate(), AGG_SCHEMA, fmt)
    if timing:
        paths["timing"] = out / f"timing.{ext}"
        _write(paths["timing"], table.rows, TIMING_SCHEMA, fmt)
    paths["spec"].parent.mkdir(parents=True, exist_ok=True)
    paths["spec"].write_text(spec_to_ini(table.spec))
    return paths


def read_rows(path: str | os.PathLike) -> list[dict]:
    """Parse a file written by :func:`emit` back into typed rows."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("# schema: "):
            schema = [tuple(item.split(":")) for item in first[len("# schema: "):].strip().split(",")]
            reader = csv.reader(fh)
            header = next(reader)
            if header != [n for n, _ in schema]:
                raise ValueError(f"{path}: header does not match schema")
            return [{n: _parse(v, k) for (n, k), v in zip(schema, row)} for row in reader]
        schema = json.loads(first)["schema"]
        rows = []
        for line in fh:
            obj = json.loads(line)
            rows.append({n: (math.nan if obj[n] is None and k == "float" else obj[n])
                         for n, k in schema.items()})
        return rows
