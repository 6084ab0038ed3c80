"""Command-line front end: scenario generation, single solves, Monte-Carlo
sweeps, and a quick self-test of the core identities."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, kpi, modp, sca, vosmetric
from .alloc import PowerAlloc
from .harness import ExperimentConfig
from .scenario import Scenario, ScenarioConfig, generate
from .subproblem import SubframeProblem, placement_from_assignment


def _load_scenario_config(path):
    if path is None:
        return ScenarioConfig()
    with open(path, encoding="utf-8") as fh:
        return ScenarioConfig.from_dict(json.load(fh))


def _get_scenario(args):
    if getattr(args, "scenario", None):
        return Scenario.load(args.scenario)
    cfg = _load_scenario_config(args.config)
    if getattr(args, "pos_snr_halved", False):
        cfg = replace(cfg, pos_snr_halved=True)
    return generate(cfg, args.seed)


def cmd_generate(args):
    cfg = _load_scenario_config(args.config)
    if args.pos_snr_halved:
        cfg = replace(cfg, pos_snr_halved=True)
    scenario = generate(cfg, args.seed)
    scenario.save(args.out)
    print(f"scenario with {scenario.n_users} users saved to {args.out}")
    return 0


def _dump_subproblems(scenario, result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ni in range(scenario.grid.n_subframes):
        placement = placement_from_assignment(result.assignment, ni)
        if not placement:
            continue
        sub = SubframeProblem(scenario, ni, placement)
        z_vec = sub.gather(result.z[:, :, ni])
        g_mat, h_vec = sub.constraint_rows(z_vec)
        np.savetxt(out / f"subframe{ni + 1}_G.txt", g_mat)
        np.savetxt(out / f"subframe{ni + 1}_h.txt", h_vec)
    print(f"subproblem matrices written under {out}")


def cmd_solve(args):
    scenario = _get_scenario(args)
    if args.algo == "MODP" and args.trace:
        res = modp.modp_solve(scenario, args.eps, trace_path=args.trace)
        res.algorithm = "MODP"
    else:
        res = harness.run_algorithm(args.algo, scenario, seed=args.seed, eps=args.eps)
    summary = {
        "algorithm": res.algorithm,
        "status": res.status,
        "log_objective": res.log_objective,
        "exact_log": None if res.exact_log.below_range else res.exact_log.value,
        "below_range": res.exact_log.below_range,
        "product_vos": res.product_vos,
        "user_vos": list(res.user_vos),
        "certified": res.certified,
        "wall_ms": res.wall_ms,
        "assignment": {str(k): list(map(int, rb)) for k in range(scenario.n_users)
                       if (rb := res.assignment.rb_of(k)) is not None},
        "diagnostics": {k: v for k, v in res.diagnostics.items()
                        if isinstance(v, (int, float, str, bool))},
    }
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"result written to {args.out}")
    else:
        print(text)
    if args.debug_dump:
        _dump_subproblems(scenario, res, args.debug_dump)
    return 0


def cmd_sweep(args):
    with open(args.config, encoding="utf-8") as fh:
        cfg = ExperimentConfig.from_dict(json.load(fh))
    if args.out:
        cfg = replace(cfg, out_csv=args.out)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    result = harness.sweep(cfg)
    print(f"{len(result.rows)} rows -> {result.csv_path}")
    print(f"{len(result.aggregates)} aggregate rows -> {result.agg_path}")
    return 0


def cmd_selftest(args):
    """Fast closed-form identity and property spot checks."""
    rng = np.random.default_rng(7)
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    pfa = rng.uniform(0.01, 0.99, 100)
    check("detection probability at zero SNR equals the false-alarm rate",
          max(abs(float(kpi.detect_prob(0.0, p)) - p) for p in pfa) <= 1e-12)
    ps = rng.uniform(0.0, 0.999, 100)
    check("chi-square CDF/inverse round trip",
          float(np.max(np.abs(kpi.chi2_cdf(kpi.chi2_inv(ps)) - ps))) <= 1e-12)

    from .types import Direction, KpiSpec
    spec = KpiSpec(Direction.HIGH, 4.0, 0.3, 0.3, 1.0)
    check("normalization breakpoints exact",
          vosmetric.normalize(spec.beta * spec.target, spec) == 0.0
          and vosmetric.normalize(spec.target, spec) == 1.0)
    qs = np.linspace(spec.beta * spec.target, spec.target, 2000)[1:-1]
    vals = [vosmetric.normalize(q, spec) for q in qs]
    check("normalization monotone on the elastic range",
          all(b >= a - 1e-15 for a, b in zip(vals, vals[1:])))

    scenario = generate(ScenarioConfig(n_comm=1, n_pos=1, n_sense=1, m_subbands=1,
                                       n_subframes=3, a_max=2), seed=3)
    a = harness.random_assignment(scenario, seed=5)
    p = PowerAlloc(sca.fixed_power_tensor(scenario, a))
    per_frame = np.asarray(p.p)[list(scenario.bs_powered_indices)].sum(axis=(0, 1))
    assigned_frames = {ni for k in scenario.bs_powered_indices
                       if (rb := a.rb_of(k)) is not None for ni in [rb[1]]}
    check("fixed power split exhausts the per-sub-frame budget",
          all(abs(per_frame[ni] - scenario.params.p_max_w)
              <= 1e-12 * scenario.params.p_max_w for ni in assigned_frames))

    same = generate(scenario.config, seed=3)
    check("seeded generation is bit-stable",
          np.array_equal(same.coeffs.h, scenario.coeffs.h))

    if failures:
        print(f"{len(failures)} self-test(s) failed", file=sys.stderr)
        return 1
    print("all self-tests passed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vosmdma",
        description="Elastic value-of-service MDMA simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="draw a scenario and save it")
    p_gen.add_argument("--config", help="scenario config JSON")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output scenario file")
    p_gen.add_argument("--pos-snr-halved", action="store_true",
                       help="use the doubled positioning-noise convention")
    p_gen.set_defaults(func=cmd_generate)

    p_solve = sub.add_parser("solve", help="run one algorithm on one instance")
    p_solve.add_argument("--scenario", help="scenario file from `generate`")
    p_solve.add_argument("--config", help="scenario config JSON (with --seed)")
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--algo", default="VoS-SCA", choices=harness.ALGORITHMS)
    p_solve.add_argument("--eps", type=float, default=modp.DEFAULT_EPS,
                         help="relative certificate tolerance for MODP")
    p_solve.add_argument("--out", help="write the JSON summary here")
    p_solve.add_argument("--trace", help="MODP state-transition trace file")
    p_solve.add_argument("--debug-dump", help="dump subproblem matrices to this dir")
    p_solve.add_argument("--pos-snr-halved", action="store_true")
    p_solve.set_defaults(func=cmd_solve)

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo sweep to CSV")
    p_sweep.add_argument("--config", required=True, help="experiment config JSON")
    p_sweep.add_argument("--out", help="override the output CSV path")
    p_sweep.add_argument("--seed", type=int, help="override the base seed")
    p_sweep.set_defaults(func=cmd_sweep)

    p_self = sub.add_parser("selftest", help="quick identity/property checks")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
