"""Command-line orchestration of the estimation/steering/evaluation pipeline.

Exit codes: 0 success, 1 config parse/validation error, 2 solver
infeasibility (diagnostics written next to the outputs), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from .config import ExperimentConfig, load_config, paper_default_config, parse_config
from .conic import SolveStatus
from .cov_steering import CovProblem, TerminalMode, solve_robust_cs
from .errors import DustError
from .evaluation import (
    Controller,
    ControllerKind,
    QuantileStudySpec,
    Table2Spec,
    Table3Spec,
    feasibility_sweep,
    quantile_study,
    run_closed_loop,
    write_table_csv,
)
from .lti import Dataset, GaussianState, collect_dataset, load_dataset, save_dataset
from .mean_steering import MeanProblem, model_error_radius, solve_nominal, solve_robust_sls
from .noise import identify_model, mle_estimate, save_noise_estimate
from .pu_steering import PUProblem, solve_pu

_EXIT_OK = 0
_EXIT_CONFIG = 1
_EXIT_INFEASIBLE = 2
_EXIT_NUMERICAL = 3


def _status_exit(status: SolveStatus, out: Path, diagnostics: dict) -> int:
    if status is SolveStatus.OPTIMAL:
        return _EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, default=str) + "\n")
    return _EXIT_INFEASIBLE if status is SolveStatus.INFEASIBLE else _EXIT_NUMERICAL


def _collect(cfg: ExperimentConfig, out: Path) -> Dataset:
    x0s = GaussianState(mean=np.zeros(cfg.system.n), cov=np.eye(cfg.system.n))
    ds = collect_dataset(cfg.system, cfg.data.T, x0s, cfg.data.input_lo, cfg.data.input_hi, cfg.data.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset")
    return ds


def _dataset_for(cfg: ExperimentConfig, out: Path) -> Dataset:
    existing = out / "dataset.csv"
    if existing.exists():
        return load_dataset(out / "dataset")
    x0s = GaussianState(mean=np.zeros(cfg.system.n), cov=np.eye(cfg.system.n))
    return collect_dataset(cfg.system, cfg.data.T, x0s, cfg.data.input_lo, cfg.data.input_hi, cfg.data.seed)


def _noise_bound(cfg: ExperimentConfig, estimate, trials_override=None):
    n, m = cfg.system.n, cfg.system.m
    sigma = estimate.Sigma_xi_hat
    if cfg.robust.bound_kind == "tight":
        return bounds_mod.tight_bound(n, m, cfg.robust.delta, sigma)
    if cfg.robust.bound_kind == "loose":
        return bounds_mod.loose_bound(n, cfg.data.T, cfg.robust.delta, sigma)
    trials = trials_override or max(cfg.mc.trials, 1000)
    return bounds_mod.empirical_quantile(cfg.system, cfg.data.T, cfg.robust.delta, trials, cfg.data.seed)


def cmd_collect(cfg, out, args) -> int:
    _collect(cfg, out)
    return _EXIT_OK


def cmd_estimate(cfg, out, args) -> int:
    ds = _dataset_for(cfg, out)
    est = mle_estimate(ds)
    out.mkdir(parents=True, exist_ok=True)
    save_noise_estimate(est, ds, out / "estimate")
    return _EXIT_OK


def cmd_bounds(cfg, out, args) -> int:
    trials = args.trials or 100_000
    spec = QuantileStudySpec(system=cfg.system, trials=trials, seed=args.seed if args.seed is not None else cfg.data.seed)
    rows = quantile_study(spec)
    out.mkdir(parents=True, exist_ok=True)
    header = ["delta", "rho_star", "tight", "loose_T10", "loose_T100"]
    write_table_csv(out / "table1.csv", header, [[r[h] for h in header] for r in rows])
    return _EXIT_OK


def cmd_steer_mean(cfg, out, args) -> int:
    ds = _dataset_for(cfg, out)
    model = identify_model(ds)
    s = cfg.steering
    eps = cfg.robust.eps_override
    if eps is None:
        est = mle_estimate(ds)
        eps = model_error_radius(_noise_bound(cfg, est), ds)
    problem = MeanProblem(
        N=s.N,
        Q=s.Q,
        R=s.R,
        mu_i=s.mu_i,
        mu_f=s.mu_f,
        x_ref=s.x_ref,
        terminal_box=s.box_halfwidth,
        eps_A=eps,
        eps_B=eps,
    )
    if eps == 0.0:
        sol = solve_nominal(problem, model)
        hyper = {"mode": "nominal", "eps": 0.0}
    else:
        sol = solve_robust_sls(problem, model, tau_grid=cfg.robust.tau_grid, gamma_grid=cfg.robust.gamma_grid, alpha=cfg.robust.alpha)
        hyper = {"mode": "robust", "eps": eps, "tau": None, "gamma": None, "alpha": cfg.robust.alpha}
        if sol.hyper is not None:
            hyper.update({"tau": sol.hyper[0], "gamma": sol.hyper[1]})
    code = _status_exit(sol.status, out, {"subcommand": "steer-mean", "status": sol.status.value, "grid": list(getattr(sol, "grid_statuses", ()))})
    if code != _EXIT_OK:
        return code
    out.mkdir(parents=True, exist_ok=True)
    n, m = cfg.system.n, cfg.system.m
    rows = []
    for k in range(s.N + 1):
        v_k = sol.v_bar[k] if k < sol.v_bar.shape[0] else np.zeros(m)
        rows.append([k, *sol.mu_bar[k].tolist(), *np.asarray(v_k).tolist()])
    header = ["k"] + [f"mu_{i + 1}" for i in range(n)] + [f"v_{i + 1}" for i in range(m)]
    write_table_csv(out / "mean_solution.csv", header, rows)
    (out / "hyper.json").write_text(json.dumps(hyper, indent=2) + "\n")
    return _EXIT_OK


def cmd_steer_cov(cfg, out, args) -> int:
    ds = _dataset_for(cfg, out)
    est = mle_estimate(ds)
    s = cfg.steering
    problem = CovProblem(N=s.N, Q=s.Q, R=s.R, Sigma_i=s.Sigma_i, Sigma_f=s.Sigma_f, terminal_mode=TerminalMode.EQUALITY)
    bound = _noise_bound(cfg, est)
    sol = solve_robust_cs(problem, ds, est, bound)
    code = _status_exit(sol.status, out, {"subcommand": "steer-cov", "status": sol.status.value, "rho": bound.rho})
    if code != _EXIT_OK:
        return code
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.system.n
    header = ["k"] + [f"sigma_{i + 1}{j + 1}" for i in range(n) for j in range(n)] + [
        f"k_{i + 1}{j + 1}" for i in range(cfg.system.m) for j in range(n)
    ]
    rows = []
    for k in range(s.N + 1):
        Kk = sol.K[k].reshape(-1) if (sol.K is not None and k < s.N) else np.zeros(cfg.system.m * n)
        rows.append([k, *sol.Sigma[k].reshape(-1).tolist(), *Kk.tolist()])
    write_table_csv(out / "cov_solution.csv", header, rows)
    summary = {"status": sol.status.value, "cost": sol.cost, "rho": bound.rho, "bound_kind": cfg.robust.bound_kind}
    (out / "cov_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return _EXIT_OK


def cmd_steer_pu(cfg, out, args) -> int:
    ds = _dataset_for(cfg, out)
    s = cfg.steering
    problem = PUProblem(
        N=s.N,
        Q=s.Q,
        R=s.R,
        mu_i=s.mu_i,
        mu_f=s.mu_f,
        Sigma_i=s.Sigma_i,
        Sigma_f=s.Sigma_f,
        sigma_xi=cfg.system.sigma_xi,
    )
    sol = solve_pu(problem, ds)
    code = _status_exit(sol.status, out, {"subcommand": "steer-pu", "status": sol.status.value})
    if code != _EXIT_OK:
        return code
    out.mkdir(parents=True, exist_ok=True)
    n, m = cfg.system.n, cfg.system.m
    header = (
        ["k"]
        + [f"mu_{i + 1}" for i in range(n)]
        + [f"v_{i + 1}" for i in range(m)]
        + [f"sigma_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        + [f"k_{i + 1}{j + 1}" for i in range(m) for j in range(n)]
    )
    rows = []
    for k in range(s.N + 1):
        vk = sol.v[k] if k < s.N else np.zeros(m)
        Kk = sol.K[k].reshape(-1) if (sol.K is not None and k < s.N) else np.zeros(m * n)
        rows.append([k, *sol.mu[k].tolist(), *vk.tolist(), *sol.Sigma[k].reshape(-1).tolist(), *Kk.tolist()])
    write_table_csv(out / "pu_solution.csv", header, rows)
    return _EXIT_OK


def cmd_montecarlo(cfg, out, args) -> int:
    ds = _dataset_for(cfg, out)
    est = mle_estimate(ds)
    model = identify_model(ds)
    s = cfg.steering
    mean_prob = MeanProblem(N=s.N, Q=s.Q, R=s.R, mu_i=s.mu_i, mu_f=s.mu_f, terminal_box=s.box_halfwidth, eps_A=0.0, eps_B=0.0)
    mean_sol = solve_nominal(mean_prob, model)
    cov_prob = CovProblem(N=s.N, Q=s.Q, R=s.R, Sigma_i=s.Sigma_i, Sigma_f=s.Sigma_f)
    bound = _noise_bound(cfg, est)
    cov_sol = solve_robust_cs(cov_prob, ds, est, bound)
    worst = next((x for x in (mean_sol.status, cov_sol.status) if x is not SolveStatus.OPTIMAL), SolveStatus.OPTIMAL)
    code = _status_exit(worst, out, {"subcommand": "montecarlo", "mean": mean_sol.status.value, "cov": cov_sol.status.value})
    if code != _EXIT_OK:
        return code
    ctrl = Controller(
        kind=ControllerKind.AFFINE_STATE_FEEDBACK,
        N=s.N,
        K=cov_sol.K,
        v=mean_sol.v_bar[: s.N],
        mu=mean_sol.mu_bar,
    )
    x0 = GaussianState(mean=s.mu_i, cov=s.Sigma_i)
    rollouts = args.trials or cfg.mc.rollouts
    stats = run_closed_loop(
        cfg.system,
        ctrl,
        x0,
        trials=rollouts,
        seed=args.seed if args.seed is not None else cfg.data.seed,
        terminal_box=(s.mu_f, s.box_halfwidth),
        sigma_f=s.Sigma_f,
    )
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.system.n
    report = {
        "emp_mean": stats.emp_mean.tolist(),
        "emp_cov": stats.emp_cov.tolist(),
        "terminal_in_box_rate": stats.terminal_in_box_rate,
        "cov_violation": stats.cov_violation,
        "trials": stats.trials,
    }
    (out / "montecarlo.json").write_text(json.dumps(report, indent=2) + "\n")
    # per-rollout terminal states for the splash plot data
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.data.seed)
    x = GaussianState(mean=s.mu_i, cov=s.Sigma_i).sample(rng, size=min(rollouts, 200))
    traj_rows = []
    for k in range(s.N):
        u = (x - ctrl.mu[k]) @ ctrl.K[k].T + ctrl.v[k]
        x = x @ cfg.system.A.T + u @ cfg.system.B.T + rng.standard_normal((x.shape[0], cfg.system.d)) @ cfg.system.D.T
        for r in range(x.shape[0]):
            traj_rows.append([r, k + 1, *x[r].tolist()])
    write_table_csv(out / "traj.csv", ["rollout", "k"] + [f"x_{i + 1}" for i in range(n)], traj_rows)
    write_table_csv(out / "splash.csv", [f"x_{i + 1}" for i in range(n)], [list(map(float, row)) for row in x])
    return _EXIT_OK


def cmd_reproduce(cfg, out, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    table = args.table
    seed = args.seed if args.seed is not None else cfg.data.seed
    if table == 1:
        trials = args.trials or 100_000
        rows = quantile_study(QuantileStudySpec(system=cfg.system, trials=trials, seed=seed))
        header = ["delta", "rho_star", "tight", "loose_T10", "loose_T100"]
        write_table_csv(out / "table1.csv", header, [[r[h] for h in header] for r in rows])
        return _EXIT_OK
    if table == 2:
        trials = args.trials or 500
        res = feasibility_sweep(Table2Spec(system=cfg.system, trials=trials, seed=seed))
        write_table_csv(out / "table2.csv", ["alpha", "width", "feasible_fraction", "failure_fraction"], res.as_records())
        return _EXIT_OK
    if table == 3:
        trials = args.trials or 500
        res = feasibility_sweep(Table3Spec(trials=trials, seed=seed))
        write_table_csv(out / "table3.csv", ["rho", "sigma_xi_sq", "feasible_fraction", "failure_fraction"], res.as_records())
        return _EXIT_OK
    raise ValueError(f"unknown table {table}")


_SUBCOMMANDS = {
    "collect": cmd_collect,
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "steer-mean": cmd_steer_mean,
    "steer-cov": cmd_steer_cov,
    "steer-pu": cmd_steer_pu,
    "montecarlo": cmd_montecarlo,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dust", description="data-driven uncertainty quantification and density steering")
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="experiment JSON (defaults to the benchmark setup)")
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--trials", type=int, default=None, help="override trial/rollout counts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--table", type=int, choices=(1, 2, 3), default=1, help="table for `reproduce`")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = parse_config(paper_default_config())
        if args.seed is not None:
            from dataclasses import replace

            cfg = ExperimentConfig(
                system=cfg.system,
                data=type(cfg.data)(T=cfg.data.T, input_lo=cfg.data.input_lo, input_hi=cfg.data.input_hi, seed=args.seed),
                steering=cfg.steering,
                robust=cfg.robust,
                mc=cfg.mc,
            )
    except (DustError, ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    try:
        return _SUBCOMMANDS[args.subcommand](cfg, args.out, args)
    except DustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
