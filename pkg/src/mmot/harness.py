"""Experiment configs, the verification pipeline, batteries and the structured benchmark.

A config is one JSON file::

    {"name": "...", "seed": 0,
     "marginals": [{"density": "uniform", "bounds": [0, 1], "n": 10}, ...],
     "cost": {"family": "submodular_graph", "params": {"m": 3}},
     "solver": {"method": "exact_lp"},
     "verify": {"gap_tol": 1e-8, "mass_tol": 1e-9, "ccm": {"p_max": 3}, ...},
     "expected": {"uniqueness": "multiple optima"}}

``report.json`` holds no timings, so equal config and seed give identical bytes;
wall-clock numbers go to ``timing.json``.
"""
from __future__ import annotations

import copy
import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from . import solver as solvers
from .costs import cost_from_spec
from .duality import conjugate_iterate, max_slack_potentials, verify_splitting_set
from .measures import marginal_from_spec, product_size
from .verify import SupportSet, check_ccm, check_graphical, twist_probe

STAGES = ("solve", "duals", "splitting", "ccm", "graphical", "twist", "uniqueness")
JUDGED = ("splitting", "ccm", "graphical", "twist", "uniqueness")
DEFAULT_EXPECTED = {
    "splitting": "splitting",
    "ccm": "pass",
    "graphical": "graph",
    "twist": "twisted-at-tolerance",
    "uniqueness": "unique-at-tolerance",
}
DEFAULT_VERIFY = {
    "gap_tol": 1e-8,
    "mass_tol": 1e-9,
    "diff_tol": None,
    "grad_tol": 1e-7,
    "conjugate_sweeps": 2,
    "splitting": True,
    "ccm": {"p_max": 3, "cap": 10_000_000},
    "graphical": True,
    "twist": {"vars": "designated"},
    "uniqueness": {"trials": 8, "delta": 1e-7},
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=True)
        fh.write("\n")


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    marginals: list
    cost: dict
    solver: dict = field(default_factory=lambda: {"method": "exact_lp"})
    verify: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        for key in ("name", "seed", "marginals", "cost"):
            if key not in d:
                raise ValueError(f"config is missing {key!r}")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ValueError("seed must be an integer")
        if not isinstance(d["marginals"], list) or not d["marginals"]:
            raise ValueError("marginals must be a nonempty list")
        verify = {**copy.deepcopy(DEFAULT_VERIFY), **d.get("verify", {})}
        return cls(d["name"], d["seed"], d["marginals"], d["cost"], d.get("solver", {"method": "exact_lp"}),
                   verify, d.get("expected", {}), d.get("out"))

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "marginals": self.marginals, "cost": self.cost,
                "solver": self.solver, "verify": self.verify, "expected": self.expected}

    def build(self):
        """Instantiate marginals and cost; arity mismatches fail here, before any solve."""
        marginals = [marginal_from_spec(s) for s in self.marginals]
        cost = cost_from_spec(self.cost)
        if cost.arity != len(marginals):
            raise ValueError(f"arity mismatch: cost has arity {cost.arity} but {len(marginals)} marginals given")
        return marginals, cost

    def expected_verdicts(self) -> dict:
        exp = {k: v for k, v in DEFAULT_EXPECTED.items() if self.enabled(k)}
        exp.update({k: v for k, v in self.expected.items() if k in exp})
        return exp

    def enabled(self, stage: str) -> bool:
        if self.solver.get("method", "exact_lp") != "exact_lp" and stage in JUDGED:
            return False
        return bool(self.verify.get(stage, True))


@dataclass
class PipelineReport:
    name: str
    seed: int
    status: str  # "complete" | "incomplete"
    verdicts: dict
    expected: dict
    stages: dict
    tolerances: dict
    timings: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def matches(self) -> dict:
        return {k: (v is None or self.verdicts.get(k) == v) for k, v in self.expected.items()}

    @property
    def ok(self) -> bool:
        return self.status == "complete" and all(self.matches.values())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "ok": self.ok,
            "verdicts": self.verdicts,
            "expected": self.expected,
            "matches": self.matches,
            "tolerances": self.tolerances,
            "stages": self.stages,
        }


def run_pipeline(config: ExperimentConfig, out: str | None = None, seed: int | None = None,
                 gap_tol: float | None = None, mass_tol: float | None = None) -> PipelineReport:
    """solve -> duals -> splitting -> ccm -> graphical -> twist -> uniqueness, writing artifacts to ``out``."""
    config = copy.deepcopy(config)
    if seed is not None:
        config.seed = seed
    if gap_tol is not None:
        config.verify["gap_tol"] = gap_tol
    if mass_tol is not None:
        config.verify["mass_tol"] = mass_tol
    out = out if out is not None else config.out
    marginals, cost = config.build()
    v = config.verify
    tol = {k: v[k] for k in ("gap_tol", "mass_tol", "diff_tol", "grad_tol")}
    rng = np.random.default_rng(config.seed)
    report = PipelineReport(config.name, config.seed, "complete", {}, config.expected_verdicts(), {}, tol)
    method = config.solver.get("method", "exact_lp")
    state = {}

    def stage_solve():
        if method == "exact_lp":
            tb = config.solver.get("tie_break_seed")
            res = solvers.solve_exact_lp(marginals, cost, tb)
        elif method == "entropic":
            res = solvers.solve_entropic(marginals, cost, float(config.solver["epsilon"]),
                                         config.solver.get("max_iter", 200_000), config.solver.get("tol", 1e-9))
        elif method == "entropic_structured":
            res = solvers.solve_entropic_structured(marginals, cost, float(config.solver["epsilon"]),
                                                    config.solver.get("max_iter", 200_000), config.solver.get("tol", 1e-9))
        else:
            raise ValueError(f"unknown solver method {method!r}")
        state["result"] = res
        summary = res.summary()
        summary.pop("runtime_ms")
        info = {"verdict": "solved", "method": method, **summary}
        if res.coupling is not None:
            info["max_marginal_violation"] = res.coupling.max_violation()
        return info

    def stage_duals():
        res = state["result"]
        pot, rep = conjugate_iterate(res.potentials, cost, v["conjugate_sweeps"])
        weights = [mu.weights for mu in marginals]
        state["potentials"] = pot.gauge_fixed()
        return {"verdict": "ok", "conjugate_sweeps": rep.sweeps, "converged": rep.converged,
                "dual_objective_lp": res.potentials.dual_value(weights),
                "dual_objective": pot.dual_value(weights)}

    def stage_splitting():
        S = state["result"].coupling.support(v["mass_tol"])
        return verify_splitting_set(state["potentials"], cost, S, v["gap_tol"]).to_dict()

    def stage_ccm():
        S = SupportSet.from_coupling(state["result"].coupling, v["mass_tol"])
        rep = check_ccm(S, cost, v["ccm"].get("p_max", 3), v["ccm"].get("cap", 10_000_000))
        return rep.to_dict()

    def stage_graphical():
        return check_graphical(state["result"].coupling, v["mass_tol"]).to_dict()

    def stage_twist():
        spec = v["twist"].get("vars", "designated")
        vars_ = cost.twist_vars if spec == "designated" else tuple(spec)
        S = state["result"].coupling.support(v["mass_tol"])
        pot, info = max_slack_potentials(marginals, cost, S)
        rep = twist_probe(pot, cost, vars_, v["gap_tol"], v["diff_tol"], v["grad_tol"])
        return {**rep.to_dict(), "potentials": "max-slack", "min_slack": info["min_slack"],
                "equality_set_size": info["equality_set_size"]}

    def stage_uniqueness():
        u = v["uniqueness"]
        probe_seed = int(rng.integers(2**31))
        rep = solvers.uniqueness_probe(marginals, cost, u.get("trials", 8), u.get("delta", 1e-7), probe_seed)
        d = rep.to_dict()
        d["probe_seed"] = probe_seed
        if rep.witnesses is not None:
            avg = rep.witnesses[0][0].average(rep.witnesses[1][0])
            d["witness_average"] = {"objective": avg.cost(cost), "max_marginal_violation": avg.max_violation(),
                                    "graphical": check_graphical(avg, v["mass_tol"]).is_graph}
        return d

    steps = {"solve": stage_solve, "duals": stage_duals, "splitting": stage_splitting, "ccm": stage_ccm,
             "graphical": stage_graphical, "twist": stage_twist, "uniqueness": stage_uniqueness}
    for name in STAGES:
        if name in JUDGED and not config.enabled(name):
            continue
        if name == "duals" and method != "exact_lp":
            continue
        t0 = time.perf_counter()
        try:
            result = steps[name]()
        except Exception as exc:  # stage failures end the run with a partial report
            report.status = "incomplete"
            report.error = f"{name}: {type(exc).__name__}: {exc}"
            report.stages[name] = {"verdict": "error", "error": str(exc)}
            if name in JUDGED:
                report.verdicts[name] = "error"
            break
        finally:
            report.timings[name] = 1000 * (time.perf_counter() - t0)
        report.stages[name] = result
        if name in JUDGED:
            report.verdicts[name] = result["verdict"]
    if out is not None:
        write_artifacts(report, state, out)
    return report


def write_artifacts(report: PipelineReport, state: dict, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    dump_json(report.to_dict(), os.path.join(out, "report.json"))
    dump_json({"stage_ms": report.timings}, os.path.join(out, "timing.json"))
    res = state.get("result")
    if res is not None and res.coupling is not None:
        res.coupling.to_csv(os.path.join(out, "coupling.csv"))
    if state.get("potentials") is not None:
        state["potentials"].to_csv(out)


# ---------------------------------------------------------------------------
# batteries

@dataclass
class BatterySummary:
    rows: list

    @property
    def ok(self) -> bool:
        return all(r["status"] == "complete" and r["matches"] for r in self.rows)

    def write(self, out: str) -> None:
        os.makedirs(out, exist_ok=True)
        dump_json({"ok": self.ok, "rows": self.rows}, os.path.join(out, "summary.json"))
        cols = ["name", "status", "matches"] + [c for s in JUDGED for c in (s, f"{s}_expected")] + ["error"]
        with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r.get(c, "") if r.get(c) is not None else "" for c in cols])


def bundled_config_dir(kind: str = "families") -> str:
    return str(resources.files("mmot") / "configs" / kind)


def _battery_row(name, report: PipelineReport | None, error: str | None) -> dict:
    row = {"name": name}
    if report is None:
        row.update({"status": "error", "matches": False, "error": error})
        return row
    row.update({"status": report.status, "matches": report.ok, "error": report.error})
    for s in JUDGED:
        row[s] = report.verdicts.get(s)
        row[f"{s}_expected"] = report.expected.get(s)
    return row


def run_battery(directory: str, out: str | None = None, workers: int = 4) -> BatterySummary:
    """Run every ``*.json`` config in ``directory``; rows are ordered by config name."""
    paths = sorted(os.path.join(directory, f) for f in os.listdir(directory) if f.endswith(".json"))
    loaded, names = [], {}
    for p in paths:
        try:
            cfg = ExperimentConfig.load(p)
            name, err = cfg.name, None
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            cfg, name, err = None, os.path.splitext(os.path.basename(p))[0], f"{type(exc).__name__}: {exc}"
        if name in names:
            raise ValueError(f"duplicate config name {name!r} in {names[name]} and {p}")
        names[name] = p
        loaded.append((name, cfg, err))

    def one(item):
        name, cfg, err = item
        if cfg is None:
            return _battery_row(name, None, err)
        try:
            sub = None if out is None else os.path.join(out, name)
            return _battery_row(name, run_pipeline(cfg, sub), None)
        except Exception as exc:  # recorded per config; the battery keeps going
            return _battery_row(name, None, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(one, loaded))
    summary = BatterySummary(sorted(rows, key=lambda r: r["name"]))
    if out is not None:
        summary.write(out)
    return summary


# ---------------------------------------------------------------------------
# dense vs structured scaling

def bench_structured(config: ExperimentConfig, sizes: Sequence[int], epsilon: float | None = None,
                     sweeps: int = 5, dense_cap: int = solvers.DENSE_CAP) -> list[dict]:
    """Time ``sweeps`` scaling sweeps per grid size, dense vs block elimination.

    The discrepancy is the largest difference between the two runs' axis
    marginals and log-scalings after the same number of sweeps.
    """
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("sizes must be nonempty")
    eps = float(epsilon if epsilon is not None else config.solver.get("epsilon", 0.1))
    rows = []
    for n in sizes:
        cfg = copy.deepcopy(config)
        for s in cfg.marginals:
            s["n"] = n
        marginals, cost = cfg.build()
        dense_evals = product_size(marginals)
        t0 = time.perf_counter()
        st = solvers.solve_entropic_structured(marginals, cost, eps, fixed_sweeps=sweeps)
        row = {"n": n, "m": len(marginals), "sweeps": sweeps, "epsilon": eps,
               "structured_evals": st.stats["cost_evaluations"], "dense_evals": dense_evals,
               "structured_ms": 1000 * (time.perf_counter() - t0)}
        if dense_evals > dense_cap:
            row.update({"dense_ms": None, "discrepancy": None, "dense_skipped": True,
                        "note": f"dense side skipped: {dense_evals} entries above cap {dense_cap}"})
        else:
            t0 = time.perf_counter()
            de = solvers.solve_entropic(marginals, cost, eps, fixed_sweeps=sweeps, cap=dense_cap)
            row["dense_ms"] = 1000 * (time.perf_counter() - t0)
            disc = max(float(np.max(np.abs(a - b))) for a, b in zip(de.axis_marginals, st.axis_marginals))
            disc = max(disc, max(float(np.max(np.abs(a - b))) for a, b in zip(de.log_scalings, st.log_scalings)))
            row.update({"discrepancy": disc, "dense_skipped": False, "note": ""})
        rows.append(row)
    return rows
