"""Baselines, seeded Monte-Carlo sweeps with CSV persistence, and the
algorithm registry the CLI drives."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import modp, sca
from .alloc import Assignment
from .result import SolveResult, build_result
from .scenario import ScenarioConfig, generate
from .types import ServiceType

ALGORITHMS = ("MODP", "VoS-SCA", "VoS-Fixed", "Random-SCA", "Random-Fixed")

CSV_COLUMNS = ("sweep_var", "sweep_value", "trial", "algo", "log_objective",
               "product_vos", "vos_comm_mean", "vos_pos_mean", "vos_sense_mean",
               "wall_ms", "certified")

AGG_COLUMNS = ("sweep_var", "sweep_value", "algo", "trials",
               "mean_log_objective", "stderr_log_objective", "mean_product_vos")


def random_assignment(scenario, seed=0) -> Assignment:
    """Seeded placement of every service on a uniformly drawn non-full RB.

    Services beyond total capacity stay unassigned (reported downstream, not
    fatal). Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    grid = scenario.grid
    rbs = [(mi, ni) for ni in range(grid.n_subframes)
           for mi in range(grid.m_subbands)]
    counts = {rb: 0 for rb in rbs}
    placements = {}
    for k in rng.permutation(scenario.n_users):
        open_rbs = [rb for rb in rbs if counts[rb] < scenario.params.a_max]
        if not open_rbs:
            break
        rb = open_rbs[int(rng.integers(len(open_rbs)))]
        placements[int(k)] = rb
        counts[rb] += 1
    return Assignment.from_placements(scenario, placements)


def run_algorithm(name, scenario, seed=0, *, eps=modp.DEFAULT_EPS,
                  eps_bar=sca.DEFAULT_EPS_BAR, swap_budget=None) -> SolveResult:
    """Run one named algorithm and return its fully evaluated result."""
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
    t0 = time.perf_counter()
    if name == "MODP":
        res = modp.modp_solve(scenario, eps)
    elif name == "VoS-SCA":
        a0 = sca.vos_prioritized_assignment(scenario, seed)
        res = sca.swap_refine(scenario, a0, seed=seed, max_iters=swap_budget,
                              eps_bar=eps_bar)
    elif name == "VoS-Fixed":
        a0 = sca.vos_prioritized_assignment(scenario, seed)
        res = build_result(scenario, name, a0, sca.fixed_power_tensor(scenario, a0))
    elif name == "Random-SCA":
        a0 = random_assignment(scenario, seed)
        p, _, info = sca.sca_power(scenario, a0, eps_bar)
        res = build_result(scenario, name, a0, p,
                           diagnostics={"below_range": info["below_range"],
                                        "trace": info["trace"]})
    else:  # Random-Fixed
        a0 = random_assignment(scenario, seed)
        res = build_result(scenario, name, a0, sca.fixed_power_tensor(scenario, a0))
    res.algorithm = name
    res.wall_ms = (time.perf_counter() - t0) * 1e3
    return res


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: a scenario template, the swept variable, and run bookkeeping."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sweep_var: str = "p_max_dbm"
    sweep_values: tuple = (10.0, 16.0, 22.0, 28.0, 34.0, 40.0)
    algorithms: tuple = ("VoS-SCA", "VoS-Fixed", "Random-SCA", "Random-Fixed")
    trials: int = 50
    base_seed: int = 1
    out_csv: str = "sweep.csv"
    record_timing: bool = True
    eps: float = modp.DEFAULT_EPS
    eps_bar: float = sca.DEFAULT_EPS_BAR
    swap_budget: int | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.sweep_values)
        if list(vals) != sorted(vals) or not all(math.isfinite(v) for v in vals):
            raise ValueError("sweep values must be finite and sorted")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        object.__setattr__(self, "sweep_values", vals)
        object.__setattr__(self, "algorithms", tuple(self.algorithms))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["scenario"] = self.scenario.to_dict()
        d["sweep_values"] = list(self.sweep_values)
        d["algorithms"] = list(self.algorithms)
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        kwargs["scenario"] = ScenarioConfig.from_dict(d.get("scenario", {}))
        return cls(**kwargs)


def apply_sweep_value(cfg: ScenarioConfig, var, value) -> ScenarioConfig:
    """Scenario template with one swept knob replaced."""
    if var == "p_max_dbm":
        return replace(cfg, p_max_dbm=float(value))
    if var == "alpha_cap":
        return replace(cfg, alpha_cap=float(value))
    if var == "beta_cap":
        return replace(cfg, beta_cap=float(value))
    if var == "m_subbands":
        return replace(cfg, m_subbands=int(value))
    if var == "n_users":
        third = int(value) // 3
        return replace(cfg, n_comm=third, n_pos=third,
                       n_sense=int(value) - 2 * third)
    raise ValueError(f"unknown sweep variable {var!r}")


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class SweepOutput:
    rows: list
    aggregates: list
    csv_path: Path
    agg_path: Path


def sweep(config: ExperimentConfig) -> SweepOutput:
    """Run value x trial x algorithm, one CSV row each, plus aggregate rows.

    Per-trial scenario seeds are base_seed + trial index, so the run set is
    identical however execution is ordered; rows are emitted in sorted order
    and all numbers are repr-round-trip exact, making the CSV byte-reproducible
    (wall_ms excepted unless record_timing is off).
    """
    rows = []
    for vi, value in enumerate(config.sweep_values):
        scen_cfg = apply_sweep_value(config.scenario, config.sweep_var, value)
        for trial in range(config.trials):
            scenario = generate(scen_cfg, config.base_seed + trial)
            for algo in config.algorithms:
                try:
                    res = run_algorithm(algo, scenario, seed=config.base_seed + trial,
                                        eps=config.eps, eps_bar=config.eps_bar,
                                        swap_budget=config.swap_budget)
                    row = {
                        "sweep_var": config.sweep_var,
                        "sweep_value": float(value),
                        "trial": trial,
                        "algo": algo,
                        "log_objective": res.log_objective,
                        "product_vos": res.product_vos,
                        "vos_comm_mean": res.vos_mean(scenario, ServiceType.COMM),
                        "vos_pos_mean": res.vos_mean(scenario, ServiceType.POS),
                        "vos_sense_mean": res.vos_mean(scenario, ServiceType.SENSE),
                        "wall_ms": res.wall_ms if config.record_timing else 0.0,
                        "certified": int(res.certified),
                    }
                except Exception as exc:  # partial failures recorded, sweep continues
                    row = {
                        "sweep_var": config.sweep_var,
                        "sweep_value": float(value),
                        "trial": trial,
                        "algo": algo,
                        "log_objective": float("nan"),
                        "product_vos": float("nan"),
                        "vos_comm_mean": float("nan"),
                        "vos_pos_mean": float("nan"),
                        "vos_sense_mean": float("nan"),
                        "wall_ms": 0.0,
                        "certified": 0,
                    }
                    row["_error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)

    algo_order = {a: i for i, a in enumerate(config.algorithms)}
    rows.sort(key=lambda r: (r["sweep_value"], r["trial"], algo_order[r["algo"]]))
    aggregates = aggregate_rows(rows)

    csv_path = Path(config.out_csv)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    agg_path = csv_path.with_name(csv_path.stem + "_agg.csv")
    write_rows(csv_path, rows)
    with open(agg_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGG_COLUMNS)
        for agg in aggregates:
            writer.writerow([_fmt(agg[c]) for c in AGG_COLUMNS])
    return SweepOutput(rows, aggregates, csv_path, agg_path)


def write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_rows(path):
    """Parse a sweep CSV back into typed rows (floats repr-round-trip exactly)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"CSV missing required columns: {missing}")
        for rec in reader:
            row = dict(rec)
            for key in ("sweep_value", "log_objective", "product_vos",
                        "vos_comm_mean", "vos_pos_mean", "vos_sense_mean", "wall_ms"):
                row[key] = float(rec[key])
            row["trial"] = int(rec["trial"])
            row["certified"] = int(rec["certified"])
            out.append(row)
    return out


def aggregate_rows(rows):
    """Mean and standard error of the log objective per (value, algorithm)."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["sweep_value"], row["algo"]), []).append(row)
    out = []
    for (value, algo), grp in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        objs = np.array([r["log_objective"] for r in grp], dtype=float)
        vos = np.array([r["product_vos"] for r in grp], dtype=float)
        n = len(objs)
        stderr = float(np.std(objs, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        out.append({
            "sweep_var": grp[0]["sweep_var"],
            "sweep_value": value,
            "algo": algo,
            "trials": n,
            "mean_log_objective": float(np.mean(objs)),
            "stderr_log_objective": stderr,
            "mean_product_vos": float(np.mean(vos)),
        })
    return out
