"""Batch experiment runner.

Experiments are described by a small INI file::

    [experiment]
    kind = sweep_nt
    realizations = 100
    seed = 7
    algos = aao
    values = 2, 4, 8, 16
    variants = direct+ris, direct, ris

    [system]
    k = 2

    [placement]
    d_ris = 30

    [solver]
    tol = 1e-5

Every realization index owns one RNG stream, so a given (seed, index) sees
the same users, channels and initial point across sweep values, variants
and algorithms. Results are a detail CSV and a summary CSV of means and
standard errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .drivers import (
    ALGORITHMS,
    ComplexityParams,
    RunOptions,
    make_instance,
    predict_complexity,
    run_algorithm,
    trace_counters,
)
from .duality import mac_to_bc, verify_duality
from .mac_covariance import dual_decomposition
from .model import LN2, composite_channel, objective
from .scenario import (
    PlacementSpec,
    SystemConfig,
    apply_blockage,
    apply_csi_error,
    build_geometry,
    make_rng,
    sample_channels,
)

__all__ = [
    "KINDS",
    "COLUMNS",
    "SpecError",
    "ExperimentSpec",
    "Record",
    "load_spec",
    "run_experiment",
    "run_realization",
    "emit_results",
    "read_records",
    "summarize",
    "table2_records",
    "main",
]

KINDS = (
    "convergence",
    "sweep_nt",
    "sweep_k",
    "csi",
    "blockage",
    "multi_ris_distance",
    "multi_ris_budget",
    "complexity_table",
)

COLUMNS = (
    "experiment", "algo", "seed", "sweep_var", "sweep_value", "subiter",
    "objective_bits", "wall_ms", "T", "I", "I_S", "I_Theta", "predicted_mults",
)

# subiter value marking the converged result of a run
FINAL = -1

# counters of the published per-iteration complexity comparison
# (direct link, K) -> {algo: counters}
TABLE2_COUNTERS = {
    ("present", 2): {"ao": dict(T=24, I=3), "aao": dict(T=21, I=3, I_Theta=1), "apgm": dict(I_S=4, I_Theta=1)},
    ("present", 6): {"ao": dict(T=26, I=8), "aao": dict(T=23, I=8, I_Theta=1), "apgm": dict(I_S=4, I_Theta=1)},
    ("present", 12): {"ao": dict(T=27, I=14), "aao": dict(T=24, I=14, I_Theta=1), "apgm": dict(I_S=5, I_Theta=1)},
    ("blocked", 2): {"ao": dict(T=24, I=3), "aao": dict(T=21, I=3, I_Theta=1), "apgm": dict(I_S=3, I_Theta=1)},
    ("blocked", 6): {"ao": dict(T=26, I=7), "aao": dict(T=23, I=7, I_Theta=1), "apgm": dict(I_S=3, I_Theta=1)},
    ("blocked", 12): {"ao": dict(T=27, I=13), "aao": dict(T=24, I=13, I_Theta=1), "apgm": dict(I_S=3, I_Theta=2)},
}

_DEFAULTS = {
    # kind: (sweep_var, values, variants, algos, system overrides)
    "convergence": ("none", (0,), ("direct+ris", "ris"), ALGORITHMS, {}),
    "sweep_nt": ("n_t", (2, 4, 8, 16), ("direct+ris", "direct", "ris"), ("aao",), {}),
    "sweep_k": ("k", (2, 4, 6, 8, 10, 12), ("direct+ris", "direct"), ("aao",), {}),
    "csi": ("csi_var", (0.0, 0.1, 0.3, 0.5, 0.7, 0.9), ("direct+ris",), ("aao",), {}),
    "blockage": ("p_unblocked", (0.0, 0.25, 0.5, 0.75, 1.0), ("direct+ris", "direct", "ris"), ("aao",), {}),
    "multi_ris_distance": ("d_ris", (10, 50, 100, 150), ("1", "2", "1+2", "1+2+3+4"), ("aao",), {"k": 6}),
    "multi_ris_budget": ("d_ris", (10, 50, 100, 150), ("1", "1+2", "1+2+3+4"), ("aao",), {"k": 6}),
    "complexity_table": ("k", (2, 6, 12), ("present", "blocked"), ALGORITHMS, {}),
}

_LINKS = {"direct+ris": (True, True), "direct": (True, False), "ris": (False, True),
          "present": (True, True), "blocked": (False, True)}


class SpecError(ValueError):
    """Invalid experiment description."""


@dataclass
class ExperimentSpec:
    kind: str
    realizations: int = 100
    seed: int = 0
    algos: Tuple[str, ...] = ()
    out: str = "results"
    values: Tuple[float, ...] = ()
    variants: Tuple[str, ...] = ()
    iterations: int = 8
    ris_budget: int = 400
    counters: str = "published"
    system: SystemConfig = field(default_factory=SystemConfig)
    placement: Dict[str, float] = field(default_factory=dict)
    solver: RunOptions = field(default_factory=RunOptions)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        _, values, variants, algos, _ = _DEFAULTS[self.kind]
        self.values = tuple(self.values) or values
        self.variants = tuple(self.variants) or variants
        self.algos = tuple(self.algos) or algos
        if self.realizations < 1:
            raise SpecError("realizations must be >= 1")
        if self.iterations < 1:
            raise SpecError("iterations must be >= 1")
        bad = [a for a in self.algos if a not in ALGORITHMS]
        if bad:
            raise SpecError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
        if self.counters not in ("published", "measured"):
            raise SpecError("counters must be 'published' or 'measured'")
        for v in self.variants:
            if self.kind.startswith("multi_ris"):
                try:
                    ids = _ris_ids(v)
                except ValueError:
                    raise SpecError(f"bad RIS subset {v!r}; use e.g. 1+2") from None
                if not ids or not set(ids) <= {1, 2, 3, 4}:
                    raise SpecError(f"bad RIS subset {v!r}; RIS ids are 1..4")
            elif v not in _LINKS:
                raise SpecError(f"unknown variant {v!r}; choose from {', '.join(_LINKS)}")
        if self.kind == "multi_ris_budget":
            for v in self.variants:
                if self.ris_budget % len(_ris_ids(v)):
                    raise SpecError(f"ris_budget {self.ris_budget} does not split over RIS set {v}")

    @property
    def sweep_var(self) -> str:
        return _DEFAULTS[self.kind][0]


@dataclass
class Record:
    experiment: str
    algo: str
    seed: int
    sweep_var: str
    sweep_value: float
    subiter: int
    objective_bits: float
    wall_ms: float
    T: float = 0.0
    I: float = 0.0
    I_S: float = 0.0
    I_Theta: float = 0.0
    predicted_mults: float = 0.0


def _ris_ids(variant: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in variant.split("+"))


def _parse_list(text: str, cast) -> tuple:
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def _typed(cls, section: configparser.SectionProxy, skip=()) -> dict:
    out = {}
    hints = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in hints:
            raise SpecError(f"unknown key {key!r} in [{section.name}]")
        default = hints[key].default
        if key == "n_k":
            out[key] = _parse_list(raw, int)
        elif isinstance(default, bool):
            out[key] = section.getboolean(key)
        elif isinstance(default, int):
            out[key] = int(raw)
        elif isinstance(default, float) or default is None:
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


_PLACEMENT_KEYS = ("l_t", "h_t", "d_ris", "h_ris", "distance")


def load_spec(path: str, **overrides) -> ExperimentSpec:
    """Read an INI experiment file; non-None keyword overrides win."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    except configparser.Error as exc:
        raise SpecError(f"malformed spec {path}: {exc}") from exc
    if not parser.has_section("experiment"):
        raise SpecError("spec needs an [experiment] section")
    exp = parser["experiment"]
    try:
        kwargs = dict(
            kind=exp.get("kind", "").strip(),
            realizations=exp.getint("realizations", 100),
            seed=exp.getint("seed", 0),
            algos=_parse_list(exp.get("algos", ""), str),
            out=exp.get("out", "results"),
            values=_parse_list(exp.get("values", ""), float),
            variants=_parse_list(exp.get("variants", ""), str),
            iterations=exp.getint("iterations", 8),
            ris_budget=exp.getint("ris_budget", 400),
            counters=exp.get("counters", "published"),
        )
        system = _typed(SystemConfig, parser["system"]) if parser.has_section("system") else {}
        placement = {}
        if parser.has_section("placement"):
            for key, raw in parser["placement"].items():
                if key not in _PLACEMENT_KEYS:
                    raise SpecError(f"unknown key {key!r} in [placement]")
                placement[key] = float(raw)
        solver = _typed(RunOptions, parser["solver"]) if parser.has_section("solver") else {}
    except ValueError as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"bad value in {path}: {exc}") from exc
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    kind = kwargs["kind"]
    if kind not in KINDS:
        raise SpecError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    base = {**_DEFAULTS[kind][4], **system}
    try:
        kwargs["system"] = SystemConfig(**base)
        kwargs["solver"] = RunOptions(**solver)
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from exc
    kwargs["placement"] = placement
    return ExperimentSpec(**kwargs)


def _placement(spec: ExperimentSpec, d_ris: Optional[float] = None,
               ris_ids: Optional[Sequence[int]] = None) -> PlacementSpec:
    p = dict(spec.placement)
    if spec.kind.startswith("multi_ris"):
        kw = {k: p[k] for k in ("l_t", "h_t", "h_ris", "distance") if k in p}
        return PlacementSpec.multi_ris(d_ris, active=ris_ids, **kw)
    kw = {k: p[k] for k in ("l_t", "h_t", "d_ris", "h_ris") if k in p}
    return PlacementSpec.single_ris(**kw)


def _point(spec: ExperimentSpec, value: float, variant: str):
    """(config, placement, link switches) for one sweep point and variant."""
    cfg = spec.system
    links = (True, True)
    if spec.kind == "sweep_nt":
        cfg = cfg.replace(n_t=int(value))
    elif spec.kind in ("sweep_k", "complexity_table"):
        cfg = cfg.replace(k=int(value), n_k=None)
    if spec.kind.startswith("multi_ris"):
        ids = _ris_ids(variant)
        n_ris = spec.ris_budget // len(ids) if spec.kind == "multi_ris_budget" else cfg.n_ris
        cfg = cfg.replace(n_s=len(ids), n_ris=n_ris)
        return cfg, _placement(spec, value, ids), links
    links = _LINKS[variant]
    return cfg, _placement(spec), links


def _final_record(name, algo, seed, spec, value, trace, rate_bits) -> Record:
    counters = trace_counters(trace, first=5)
    return Record(name, algo, seed, spec.sweep_var, float(value), FINAL, rate_bits,
                  trace.rows[-1].wall_ms, predicted_mults=0.0, **counters)


def run_realization(spec: ExperimentSpec, index: int) -> List[Record]:
    """All records of realization ``index`` (every sweep point, variant, algorithm)."""
    records: List[Record] = []
    if spec.kind == "complexity_table" and spec.counters == "published":
        return records
    for value in spec.values:
        for variant in spec.variants:
            cfg, placement, (direct, ris) = _point(spec, value, variant)
            rng = make_rng(spec.seed, index)
            geometry = build_geometry(cfg, placement, rng)
            channels = sample_channels(cfg, geometry, rng, seed=spec.seed)
            if spec.kind == "blockage" and direct:
                channels = apply_blockage(channels, float(value), rng)
            if spec.kind == "csi":
                channels = apply_csi_error(channels, float(value), rng)
            channels = channels.with_links(direct=direct, ris=ris)
            inst = make_instance(channels, cfg.power, rng)
            name = f"{spec.kind}:{variant}"
            opts = spec.solver
            if spec.kind == "convergence":
                opts = dataclasses.replace(opts, tol=0.0, max_outer=spec.iterations)
            for algo in spec.algos:
                trace = run_algorithm(algo, inst, opts)
                if spec.kind == "convergence":
                    for j, row in enumerate(trace.rows):
                        records.append(Record(name, algo, index, spec.sweep_var, float(value), j,
                                              row.objective_bits, row.wall_ms, row.T, row.I,
                                              row.I_S, row.I_Theta, row.predicted_mults))
                    continue
                rate = trace.final_rate
                if spec.kind == "csi":
                    # rate the estimate-optimized solution delivers on the true channel
                    rate = objective(channels.true, trace.theta, trace.S) / LN2
                rec = _final_record(name, algo, index, spec, value, trace, rate)
                if spec.kind == "complexity_table":
                    p = ComplexityParams(K=channels.k, N_t=channels.n_t, N_r=max(channels.antennas),
                                         N_s=channels.n_s, N_ris=channels.n_elements // channels.n_s,
                                         T=rec.T, I=rec.I, I_S=rec.I_S, I_Theta=rec.I_Theta)
                    rec.predicted_mults = float(predict_complexity(algo, p))
                records.append(rec)
    return records


def table2_records(spec: Optional[ExperimentSpec] = None) -> List[Record]:
    """Predicted per-iteration multiplications from the published counters."""
    cfg = spec.system if spec is not None else SystemConfig()
    records = []
    for (dl, k), per_algo in TABLE2_COUNTERS.items():
        for algo in ALGORITHMS:
            c = per_algo[algo]
            p = ComplexityParams(K=k, N_t=cfg.n_t, N_r=cfg.n_r, N_s=cfg.n_s, N_ris=cfg.n_ris, **c)
            records.append(Record(f"complexity_table:{dl}", algo, 0, "k", float(k), FINAL,
                                  float("nan"), 0.0, predicted_mults=float(predict_complexity(algo, p)),
                                  **{key: float(v) for key, v in c.items()}))
    return records


def _task(args):
    spec, index = args
    return run_realization(spec, index)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> List[Record]:
    """Run every realization; record order is independent of ``workers``."""
    if spec.kind == "complexity_table" and spec.counters == "published":
        return table2_records(spec)
    tasks = [(spec, i) for i in range(spec.realizations)]
    if workers <= 1:
        chunks = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_task, tasks))
    return [r for chunk in chunks for r in chunk]


def summarize(records: Sequence[Record]) -> List[dict]:
    """Mean and standard error of objective and wall time per group."""
    groups: Dict[tuple, List[Record]] = {}
    for r in records:
        groups.setdefault((r.experiment, r.algo, r.sweep_var, r.sweep_value, r.subiter), []).append(r)
    out = []
    for key, rows in groups.items():
        row = dict(zip(("experiment", "algo", "sweep_var", "sweep_value", "subiter"), key))
        row["n"] = len(rows)
        for col in ("objective_bits", "wall_ms", "T", "I", "I_S", "I_Theta", "predicted_mults"):
            x = np.array([getattr(r, col) for r in rows], dtype=float)
            row[f"{col}_mean"] = float(np.mean(x))
            row[f"{col}_se"] = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        out.append(row)
    return out


def _cell(v):
    # repr of a Python float round-trips exactly
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def emit_results(records: Sequence[Record], out_dir: str, name: str = "results") -> Tuple[str, str]:
    """Write ``<name>.csv`` (detail) and ``<name>_summary.csv``; return both paths."""
    if not records:
        raise ValueError("no records to write")
    os.makedirs(out_dir, exist_ok=True)
    detail = os.path.join(out_dir, f"{name}.csv")
    summary = os.path.join(out_dir, f"{name}_summary.csv")
    with open(detail, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([_cell(v) for v in dataclasses.astuple(r)])
    rows = summarize(records)
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(v) for k, v in row.items()})
    return detail, summary


def read_records(path: str) -> List[Record]:
    types = {f.name: f.type for f in dataclasses.fields(Record)}
    casts = {"str": str, "int": int, "float": float}
    with open(path, newline="", encoding="utf-8") as fh:
        return [Record(**{k: casts[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(fh)]


def selftest(seed: int = 0) -> List[str]:
    """Quick invariant battery; returns the failures (empty when all pass)."""
    failures = []
    expected = [211392, 28368, 10592, 540864, 207072, 28064, 1309248, 720576, 58240,
                211392, 28368, 9744, 514656, 183888, 26448, 1254816, 672192, 95424]
    got = [int(r.predicted_mults) for r in table2_records()]
    if got != expected:
        failures.append(f"complexity table mismatch: {got}")
    cfg = SystemConfig(n_t=4, n_r=2, k=3, n_ris=16)
    for i in range(3):
        rng = make_rng(seed, i)
        ch = sample_channels(cfg, build_geometry(cfg, PlacementSpec.single_ris(), rng), rng)
        inst = make_instance(ch, cfg.power, rng)
        for algo in ALGORITHMS:
            tr = run_algorithm(algo, inst)
            if np.any(np.diff(tr.objectives) < -1e-9):
                failures.append(f"{algo} realization {i}: objective decreased")
        H = composite_channel(ch, tr.theta)
        S, state = dual_decomposition(H, cfg.power)
        if state.mu > state.mu_bound + state.eps:
            failures.append(f"realization {i}: multiplier {state.mu} above its bound")
        rep = verify_duality(H, S, mac_to_bc(H, S))
        if not rep.ok:
            failures.append(f"realization {i}: duality gap {rep.rate_gap:.3g}")
    return failures


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="risbc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment described by an INI file")
    run.add_argument("--spec", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--realizations", type=int)
    run.add_argument("--algos", help="comma-separated subset of ao,aao,apgm")
    run.add_argument("--out")
    run.add_argument("--workers", type=int, default=1)
    tab = sub.add_parser("complexity-table", help="print predicted per-iteration multiplications")
    tab.add_argument("--out", help="also write CSVs to this directory")
    st = sub.add_parser("selftest", help="run quick numerical invariant checks")
    st.add_argument("--seed", type=int, default=0)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        algos = _parse_list(args.algos, str) if args.algos else None
        try:
            spec = load_spec(args.spec, seed=args.seed, realizations=args.realizations,
                             algos=algos, out=args.out)
        except SpecError as exc:
            print(f"spec error: {exc}", file=sys.stderr)
            return 2
        records = run_experiment(spec, workers=args.workers)
        try:
            detail, summary = emit_results(records, spec.out, spec.kind)
        except (OSError, ValueError) as exc:
            print(f"cannot write results: {exc}", file=sys.stderr)
            return 1
        print(detail)
        print(summary)
        return 0
    if args.command == "complexity-table":
        records = table2_records()
        print(f"{'DL':8} {'K':>3} {'algo':5} {'T':>4} {'I':>4} {'I_S':>4} {'I_Th':>4} {'mults':>9}")
        for r in records:
            dl = r.experiment.split(":")[1]
            print(f"{dl:8} {int(r.sweep_value):3d} {r.algo:5} {r.T:4g} {r.I:4g} {r.I_S:4g} "
                  f"{r.I_Theta:4g} {int(r.predicted_mults):9d}")
        if args.out:
            emit_results(records, args.out, "complexity_table")
        return 0
    failures = selftest(args.seed)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    if failures:
        return 3
    print("selftest passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
