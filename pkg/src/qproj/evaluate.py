"""Metrics, per-instance evaluation with timing, and experiment sweeps.

Solution quality is the relative error (u_hat - u*) / (u0 - u*) with u0 = 0
the trivial feasible objective; methods that fail to produce a feasible
solution score exactly 1. Timing covers projection generation plus the
reduced solve (median of repeated runs); the u* oracle is computed once,
cached, and never timed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .core import (
    ProjectionMatrix,
    QpInstance,
    instance_to_dict,
    max_violation,
    objective,
    project,
    recover,
)
from .gnn import ModelParams, forward, forward_raw
from .solver import SolveStatus, SolverSettings, solve_qp


def relative_error(u_hat: float, u_star: float, u0: float) -> float:
    """(u_hat - u*) / (u0 - u*); 0 is optimal, 1 matches the trivial point."""
    denom = u0 - u_star
    if denom <= 0.0:
        raise ValueError(
            f"degenerate denominator: u0={u0!r} must strictly exceed u*={u_star!r}"
        )
    return (u_hat - u_star) / denom


@dataclass
class EvalRecord:
    instance_id: str
    method: str
    k: int
    relative_error: float
    feasible: bool
    projection_time_s: float
    solve_time_s: float
    total_time_s: float
    objective: float
    u_star: float


EVAL_COLUMNS = [f.name for f in dc_fields(EvalRecord)]


def write_records_csv(path, records, extra_columns=None) -> None:
    """Long-format CSV; exactly the EvalRecord fields, optionally prefixed by
    sweep context columns (records then are (context_dict, EvalRecord))."""
    extra_columns = list(extra_columns or [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(extra_columns + EVAL_COLUMNS)
        for item in records:
            ctx, rec = item if extra_columns else ({}, item)
            row = [ctx.get(c, "") for c in extra_columns]
            row += [getattr(rec, c) for c in EVAL_COLUMNS]
            writer.writerow(row)


class SolutionCache:
    """Disk-backed cache of full-problem optima keyed by instance content
    and solver tolerances."""

    def __init__(self, cache_dir=None, settings: SolverSettings | None = None):
        self.cache_dir = cache_dir
        self.settings = settings or SolverSettings()
        self._mem = {}
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def key(self, inst: QpInstance) -> str:
        doc = instance_to_dict(inst)
        doc.pop("meta", None)
        payload = json.dumps(doc, sort_keys=True) + json.dumps(
            [self.settings.eps_abs, self.settings.eps_rel]
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def u_star(self, inst: QpInstance) -> float:
        return self.entry(inst)["u_star"]

    def x_star(self, inst: QpInstance) -> np.ndarray:
        return np.asarray(self.entry(inst)["x_star"])

    def entry(self, inst: QpInstance) -> dict:
        k = self.key(inst)
        if k in self._mem:
            return self._mem[k]
        path = os.path.join(self.cache_dir, k + ".json") if self.cache_dir else None
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                entry = json.load(fh)
        else:
            res = solve_qp(inst, self.settings)
            entry = {
                "u_star": res.objective,
                "x_star": res.y_star.tolist(),
                "status": res.status.value,
            }
            if path:
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(entry, fh)
        self._mem[k] = entry
        return entry

    def warm(self, instances, threads: int = 1) -> None:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(self.entry, instances))
        else:
            for inst in instances:
                self.entry(inst)


# ---------------------------------------------------------------------------
# Method wrappers. Each exposes a name and either a projection per instance
# or a direct solution estimate.

class ProjectionMethod:
    kind = "projection"

    def make_projection(self, inst: QpInstance, index: int) -> ProjectionMatrix:
        raise NotImplementedError


class OursMethod(ProjectionMethod):
    def __init__(self, params: ModelParams, name: str = "ours"):
        self.params = params
        self.name = name
        self.k = params.k

    def make_projection(self, inst, index):
        proj, _ = forward(self.params, inst, self.k)
        return proj


class RandMethod(ProjectionMethod):
    """Uniformly selects K coordinates; instance d uses seed base_seed + d."""

    def __init__(self, k: int, base_seed: int = 0, name: str = "rand"):
        self.k = k
        self.base_seed = base_seed
        self.name = name

    def make_projection(self, inst, index):
        from .baselines import rand_projection
        return rand_projection(inst.n_vars, self.k, self.base_seed + index)


class FixedProjectionMethod(ProjectionMethod):
    """Shared projection matrix (PCA / SharedP), adapted by zero-padding or
    truncation when the test dimension differs."""

    def __init__(self, P: np.ndarray, name: str):
        self.P = np.asarray(P, dtype=np.float64)
        self.k = self.P.shape[1]
        self.name = name

    def make_projection(self, inst, index):
        from .baselines import adapt_projection
        return adapt_projection(self.P, inst.n_vars)


class DirectMethod:
    kind = "direct"

    def __init__(self, model, name: str = "direct"):
        self.model = model
        self.name = name
        self.k = 0

    def predict(self, inst):
        x, _ = forward_raw(self.model.params, inst)
        return x[:, 0]


class FullMethod:
    kind = "full"
    name = "full"
    k = 0


def _median_time(fn, repeats: int):
    """Run fn once for its value, then `repeats` times for timing; returns
    (value, median seconds). repeats = 0 disables timing (0.0 recorded)."""
    value = fn()
    if repeats <= 0:
        return value, 0.0
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return value, float(np.median(times))


def evaluate_method(method, test_set, k: int | None = None,
                    settings: SolverSettings | None = None,
                    cache: SolutionCache | None = None,
                    timing_repeats: int = 3,
                    feas_tol: float = 1e-6,
                    threads: int = 1) -> list:
    """One EvalRecord per test instance.

    test_set is a list of QpInstance (ids read from meta). Failures --
    non-Solved reduced problems or infeasible recovered points -- are data,
    scored with relative error 1. Feasibility is always recomputed from the
    raw lifted point. Timing is pinned to sequential execution; threads only
    parallelize the untimed u* warm-up.
    """
    settings = settings or SolverSettings()
    cache = cache or SolutionCache(settings=settings)
    cache.warm(test_set, threads=threads)
    method_k = getattr(method, "k", None)
    if k is not None and method_k not in (None, 0) and method_k != k:
        raise ValueError(f"method emits K={method_k}, caller expects K={k}")

    records = []
    for index, inst in enumerate(test_set):
        inst_id = inst.meta.get("id", f"instance-{index:04d}")
        u_star = cache.u_star(inst)
        if method.kind == "projection":
            proj, t_proj = _median_time(
                lambda: method.make_projection(inst, index), timing_repeats
            )
            reduced = project(inst, proj)
            res, t_solve = _median_time(
                lambda: solve_qp(reduced, settings), timing_repeats
            )
            x = recover(proj, res.y_star)
            feasible = (res.status is SolveStatus.SOLVED
                        and max_violation(inst, x) <= feas_tol)
            u_hat = objective(inst, x)
            err = relative_error(u_hat, u_star, 0.0) if feasible else 1.0
            rec_k = proj.k
        elif method.kind == "direct":
            x, t_proj = _median_time(lambda: method.predict(inst), timing_repeats)
            t_solve = 0.0
            feasible = max_violation(inst, x) <= feas_tol
            u_hat = objective(inst, x)
            err = relative_error(u_hat, u_star, 0.0) if feasible else 1.0
            rec_k = 0
        elif method.kind == "full":
            res, t_solve = _median_time(lambda: solve_qp(inst, settings),
                                        timing_repeats)
            t_proj = 0.0
            x = res.y_star
            feasible = (res.status is SolveStatus.SOLVED
                        and max_violation(inst, x) <= feas_tol)
            u_hat = res.objective
            err = relative_error(u_hat, u_star, 0.0) if feasible else 1.0
            rec_k = inst.n_vars
        else:
            raise ValueError(f"unknown method kind {method.kind!r}")
        records.append(EvalRecord(
            instance_id=inst_id,
            method=method.name,
            k=rec_k,
            relative_error=float(err),
            feasible=bool(feasible),
            projection_time_s=t_proj,
            solve_time_s=t_solve,
            total_time_s=t_proj + t_solve,
            objective=float(u_hat),
            u_star=float(u_star),
        ))
    return records


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def summarize(rows, group_cols, value_col="relative_error"):
    """Group (context, EvalRecord) rows and emit mean +/- standard error."""
    groups = {}
    for ctx, rec in rows:
        key = tuple(ctx.get(c, getattr(rec, c, "")) for c in group_cols)
        groups.setdefault(key, []).append(getattr(rec, value_col))
    out = []
    for key in sorted(groups, key=lambda t: tuple(map(str, t))):
        mean, se = mean_stderr(groups[key])
        out.append(dict(zip(group_cols, key)) | {
            "mean_" + value_col: mean,
            "stderr_" + value_col: se,
            "count": len(groups[key]),
        })
    return out


# ---------------------------------------------------------------------------
# Experiment runner. The experiment spec is a JSON document:
#
# {
#   "solver": {"eps_abs": ..., ...},            optional
#   "timing_repeats": 3,                        optional (0 disables timing)
#   "sweeps": [
#     {"type": "k_sweep",
#      "name": "...",                           optional tag
#      "manifest": "path/to/manifest.json",
#      "methods": ["ours", "rand", "pca", "sharedp", "direct", "full"],
#      "k_values": [5, 10, 20],
#      "checkpoints": {"ours": {"5": "ours_k5.json", ...},
#                      "sharedp": {...}, "pca": {...}, "direct": {...}},
#      "rand_seed": 0},
#     {"type": "generalization_sweep",          varying test manifests
#      "axis": "n",                             context label for the setting
#      "manifests": {"100": "...", "200": "..."},
#      "methods": [...], "k": 10, "checkpoints": {"ours": "...", ...}},
#     {"type": "d_sweep",                       varying training-set size,
#      "manifest": "...",                       fixed test split
#      "methods": [...], "k": 10,
#      "checkpoints": {"ours": {"30": "...", "60": "..."}, ...}},
#     {"type": "cross_dataset",
#      "manifests": {"regression": "...", ...},
#      "checkpoints": {"regression": "...", ...},   one model per train family
#      "methods": ["ours"], "k": 10}
#   ]
# }
#
# Checkpoint values are paths: "ours"/"direct" -> model checkpoints,
# "pca"/"sharedp" -> projection artifacts (see baselines.save_artifact).
# Missing checkpoints are reported per cell and the run continues.

def _load_method(name, spec_entry, k, rand_seed=0):
    from . import baselines
    from .gnn import load_checkpoint

    if name == "rand":
        return RandMethod(k, base_seed=rand_seed)
    if name == "full":
        return FullMethod()
    if spec_entry is None:
        raise FileNotFoundError(f"no checkpoint configured for method {name!r}")
    if name == "ours":
        return OursMethod(load_checkpoint(spec_entry))
    if name == "direct":
        return DirectMethod(baselines.load_artifact(spec_entry))
    if name in ("pca", "sharedp"):
        art = baselines.load_artifact(spec_entry)
        return FixedProjectionMethod(art.P, name)
    raise ValueError(f"unknown method {name!r}")


def _checkpoint_for(checkpoints, method, setting=None):
    entry = (checkpoints or {}).get(method)
    if isinstance(entry, dict) and setting is not None:
        entry = entry.get(str(setting))
    return entry


def run_experiment(spec, out_dir) -> dict:
    """Run the sweeps of an experiment spec; emits records.csv (long format),
    summary.csv, and diagnostics.txt under out_dir. Returns paths and the
    in-memory rows."""
    from .datasets import DatasetManifest

    if isinstance(spec, (str, os.PathLike)):
        with open(spec, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    os.makedirs(out_dir, exist_ok=True)
    settings = SolverSettings(**spec.get("solver", {}))
    timing_repeats = int(spec.get("timing_repeats", 3))
    feas_tol = float(spec.get("feas_tol", 1e-6))
    cache = SolutionCache(cache_dir=spec.get("cache_dir"), settings=settings)

    context_cols = ["sweep", "sweep_type", "setting", "train_tag", "test_tag"]
    rows = []
    skipped = []

    def eval_into(ctx, method, test_set):
        recs = evaluate_method(method, test_set, settings=settings, cache=cache,
                               timing_repeats=timing_repeats, feas_tol=feas_tol)
        rows.extend((ctx, rec) for rec in recs)

    for si, sweep in enumerate(spec.get("sweeps", [])):
        stype = sweep["type"]
        sname = sweep.get("name", f"{stype}-{si}")
        methods = sweep.get("methods", [])
        rand_seed = int(sweep.get("rand_seed", 0))
        if stype == "k_sweep":
            manifest = DatasetManifest.load(sweep["manifest"])
            test_set = manifest.load_split("test")
            for k in sweep["k_values"]:
                for mname in methods:
                    ckpt = _checkpoint_for(sweep.get("checkpoints"), mname, k)
                    try:
                        method = _load_method(mname, ckpt, int(k), rand_seed)
                    except (FileNotFoundError, OSError) as exc:
                        skipped.append(f"{sname}: method={mname} k={k}: {exc}")
                        continue
                    ctx = {"sweep": sname, "sweep_type": stype, "setting": k,
                           "train_tag": manifest.family, "test_tag": manifest.family}
                    eval_into(ctx, method, test_set)
        elif stype == "generalization_sweep":
            axis = sweep.get("axis", "n")
            for setting, mpath in sweep["manifests"].items():
                manifest = DatasetManifest.load(mpath)
                test_set = manifest.load_split("test")
                for mname in methods:
                    ckpt = _checkpoint_for(sweep.get("checkpoints"), mname)
                    try:
                        method = _load_method(mname, ckpt, int(sweep["k"]), rand_seed)
                    except (FileNotFoundError, OSError) as exc:
                        skipped.append(f"{sname}: method={mname} {axis}={setting}: {exc}")
                        continue
                    ctx = {"sweep": sname, "sweep_type": stype,
                           "setting": f"{axis}={setting}",
                           "train_tag": manifest.family, "test_tag": manifest.family}
                    eval_into(ctx, method, test_set)
        elif stype == "d_sweep":
            manifest = DatasetManifest.load(sweep["manifest"])
            test_set = manifest.load_split("test")
            d_values = sorted(
                {d for entry in (sweep.get("checkpoints") or {}).values()
                 if isinstance(entry, dict) for d in entry},
                key=lambda s: int(s),
            )
            for d_count in d_values:
                for mname in methods:
                    ckpt = _checkpoint_for(sweep.get("checkpoints"), mname, d_count)
                    try:
                        method = _load_method(mname, ckpt, int(sweep["k"]), rand_seed)
                    except (FileNotFoundError, OSError) as exc:
                        skipped.append(f"{sname}: method={mname} d={d_count}: {exc}")
                        continue
                    ctx = {"sweep": sname, "sweep_type": stype,
                           "setting": f"d={d_count}",
                           "train_tag": manifest.family, "test_tag": manifest.family}
                    eval_into(ctx, method, test_set)
        elif stype == "cross_dataset":
            manifests = {fam: DatasetManifest.load(p)
                         for fam, p in sweep["manifests"].items()}
            for train_fam in manifests:
                ckpt = _checkpoint_for(sweep.get("checkpoints"), train_fam)
                for mname in methods or ["ours"]:
                    try:
                        method = _load_method(mname, ckpt, int(sweep["k"]), rand_seed)
                    except (FileNotFoundError, OSError) as exc:
                        skipped.append(f"{sname}: train={train_fam}: {exc}")
                        continue
                    for test_fam, manifest in manifests.items():
                        ctx = {"sweep": sname, "sweep_type": stype,
                               "setting": f"{train_fam}->{test_fam}",
                               "train_tag": train_fam, "test_tag": test_fam}
                        eval_into(ctx, method, manifest.load_split("test"))
        else:
            raise ValueError(f"unknown sweep type {stype!r}")

    records_path = os.path.join(out_dir, "records.csv")
    write_records_csv(records_path, rows, extra_columns=context_cols)

    summary = summarize(rows, context_cols + ["method"])
    for row in summary:
        row["is_diagonal"] = (row["sweep_type"] == "cross_dataset"
                              and row["train_tag"] == row["test_tag"])
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        if summary:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
            writer.writeheader()
            writer.writerows(summary)
        else:
            csv.writer(fh).writerow(context_cols + ["method"])

    diag_lines = [f"skipped: {s}" for s in skipped]
    diag_lines += _k_trend_diagnostics(rows)
    diag_path = os.path.join(out_dir, "diagnostics.txt")
    with open(diag_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(diag_lines) + ("\n" if diag_lines else ""))

    return {"records": records_path, "summary": summary_path,
            "diagnostics": diag_path, "rows": rows, "skipped": skipped}


def _k_trend_diagnostics(rows, tol=0.02):
    """Mean error should be nonincreasing in K within noise for every method
    of a k_sweep; emit one line per consecutive pair, flagging violations."""
    per = {}
    for ctx, rec in rows:
        if ctx.get("sweep_type") != "k_sweep":
            continue
        key = (ctx["sweep"], rec.method)
        per.setdefault(key, {}).setdefault(int(ctx["setting"]), []).append(
            rec.relative_error
        )
    lines = []
    for (sweep, method), by_k in sorted(per.items()):
        ks = sorted(by_k)
        for k1, k2 in zip(ks, ks[1:]):
            m1 = float(np.mean(by_k[k1]))
            m2 = float(np.mean(by_k[k2]))
            flag = "ok" if m2 <= m1 + tol else "VIOLATION"
            lines.append(
                f"k-trend {sweep} {method}: K={k1} mean={m1:.4f} -> "
                f"K={k2} mean={m2:.4f} [{flag}]"
            )
    return lines
