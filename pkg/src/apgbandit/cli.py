"""Command-line driver: ``basis``, ``design``, ``run``, ``bench`` and ``adv``.

Exit status is 0 on success, 1 if any run failed and 2 for configuration
errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PRESETS, Config, load_config

log = logging.getLogger("apgbandit")

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


def _admissible_error(cfg: Config, T: int, n_arms: int) -> float:
    from .rkhs import ApgConfig

    return ApgConfig("UCB", T=T, q=cfg.apg.q, alpha=cfg.apg.alpha).admissible_error(n_arms)


def _basis_for(cfg: Config, dim: int, T: int, error: float | None = None):
    from .environments import grid_arms
    from .pgreedy import build_basis

    kernel = cfg.kernel.build(dim)
    arms = grid_arms(dim, cfg.env.grid.get(dim))
    err = error if error is not None else _admissible_error(cfg, T, len(arms))
    return kernel, arms, build_basis(kernel, arms, err, max_points=cfg.apg.max_points)


def cmd_basis(cfg: Config, out: Path) -> int:
    from .bench import _write_csv
    from .pgreedy import decay_diagnostics

    b = cfg.basis
    kernel, arms, basis = _basis_for(cfg, b.dim, b.T, b.error)
    rows = []
    for k, idx in enumerate(basis.indices):
        rows.append([k + 1, int(idx), *arms[idx], basis.residual_trace[k]])
    coords = [f"x{i + 1}" for i in range(b.dim)]
    path = out / f"basis_{cfg.kernel.label()}_d{b.dim}.csv"
    header = [f"config_hash={cfg.hash()}", f"kernel={kernel.to_dict()}", f"error={basis.admissible_error!r}"]
    _write_csv(path, header, ["step", "arm", *coords, "power_sq"], rows)
    print(f"points={basis.size} error={basis.admissible_error:.6g} truncated={basis.truncated} exhausted={basis.exhausted}")
    if basis.size >= 11:
        rep = decay_diagnostics(basis)
        print(f"decay: {rep.regime} exp_r2={rep.exp_r2:.3f} poly_slope={rep.poly_slope:.3f} poly_r2={rep.poly_r2:.3f}")
    print(path)
    return EXIT_OK


def cmd_design(cfg: Config, out: Path) -> int:
    from .bench import _write_csv
    from .misspec import g_optimal_design, span_reduce

    b = cfg.basis
    kernel, arms, basis = _basis_for(cfg, b.dim, b.T, b.error)
    F, _ = span_reduce(basis.candidate_features)
    design = g_optimal_design(F, tol=cfg.apg.design_tol)
    D = F.shape[1]
    rows = [[int(a), design.weights[a], design.leverages[a]] for a in design.support]
    path = out / f"design_{cfg.kernel.label()}_d{b.dim}.csv"
    _write_csv(path, [f"config_hash={cfg.hash()}", f"D={D}"], ["arm", "weight", "leverage"], rows)
    print(f"D={D} support={len(design.support)} leverage_max={design.leverage_max:.6g} "
          f"ratio={design.leverage_max / D:.6f} iterations={design.iterations} converged={design.converged}")
    print(path)
    return EXIT_OK


def cmd_run(cfg: Config, out: Path) -> int:
    from .bench import RUN_COLUMNS, _seed, _write_csv, normalize, run_algorithm
    from .environments import generate_env

    alg = cfg.require("run.algorithm").upper()
    dim = cfg.require("run.dim")
    r = cfg.run
    kernel = cfg.kernel.build(dim)
    env = generate_env(kernel, dim, seed=r.env_seed, m=cfg.env.grid.get(dim), l1_mode=cfg.env.l1_mode,
                       noise_fraction=cfg.env.noise_fraction, max_centers=cfg.env.max_centers)
    curve = run_algorithm(cfg, alg, env, r.T, env.noise_sigma,
                          noise_seed=_seed(cfg, r.env_seed, 1), rng_seed=_seed(cfg, r.env_seed, 2))
    cum = curve.cumulative
    norm = normalize(cum, env)
    path = out / f"run_{cfg.kernel.label()}_d{dim}_env{r.env_seed}_{alg}.csv"
    header = [f"config_hash={cfg.hash()}", f"seed={cfg.seed}", f"algorithm={alg}", f"T={r.T}"]
    _write_csv(path, header, RUN_COLUMNS, zip(range(1, r.T + 1), curve.arms, curve.instant, cum, norm))
    bs = "" if curve.basis_size is None else f" basis={curve.basis_size}"
    print(f"{alg}: regret={cum[-1]:.6g} normalized={norm[-1]:.6g}{bs} total_s={curve.total_time:.3f}")
    print(path)
    return EXIT_OK


def cmd_bench(cfg: Config, out: Path, threads: int | None) -> int:
    from .bench import bench_paper

    res = bench_paper(cfg, out, threads)
    for (label, d, alg), s in res["summary"].items():
        print(f"{label} d={d} {alg}: normalized regret {s['final_mean']:.4g} +- {s['final_sd']:.3g} ({s['runs']} runs)")
    for slug, err in res["failures"]:
        print(f"FAILED {slug}: {err}", file=sys.stderr)
    print(res["out_dir"])
    return EXIT_RUN if res["failures"] else EXIT_OK


def adversarial_experiment(cfg: Config):
    """APG-EXP3 over ``adv.n_seeds`` sequences; returns (expected regret per seed, uniform-play regret per seed)."""
    from .bench import _seed
    from .environments import generate_adversarial
    from .rkhs import ApgConfig, apg_exp3_run

    a = cfg.adv
    kernel = cfg.kernel.build(a.dim)
    exp3, unif = [], []
    for s in range(a.n_seeds):
        seq = generate_adversarial(kernel, a.dim, a.T, a.drift_period, seed=_seed(cfg, 7, s), m=a.m,
                                   max_centers=cfg.env.max_centers)
        acfg = ApgConfig("EXP3", T=a.T, q=cfg.apg.q, alpha=cfg.apg.alpha, B=cfg.apg.B,
                         design_tol=cfg.apg.design_tol, eta=cfg.apg.eta, max_points=cfg.apg.max_points)
        curve = apg_exp3_run(acfg, kernel, seq.arms, seq, np.random.default_rng(_seed(cfg, 8, s)))
        best = seq.best_arm()
        per_fn = seq.table[:, best] - seq.table.mean(axis=1)
        unif.append(per_fn[np.arange(a.T) // a.drift_period])
        exp3.append(curve.instant)
    return np.array(exp3), np.array(unif)


def cmd_adv(cfg: Config, out: Path) -> int:
    from .bench import _write_csv

    exp3, unif = adversarial_experiment(cfg)
    T = cfg.adv.T
    mean_e, mean_u = exp3.mean(axis=0), unif.mean(axis=0)
    path = out / "adv_exp3.csv"
    _write_csv(path, [f"config_hash={cfg.hash()}", f"seeds={len(exp3)}"],
               ["round", "exp3_expected_regret", "uniform_expected_regret",
                "exp3_cumulative", "uniform_cumulative"],
               zip(range(1, T + 1), mean_e, mean_u, np.cumsum(mean_e), np.cumsum(mean_u)))
    tail = min(2000, T)
    re, ru = mean_e[-tail:].mean(), mean_u[-tail:].mean()
    print(f"last {tail} rounds: exp3 {re:.4g} per round, uniform {ru:.4g} per round, ratio {re / ru:.4g}")
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apgbandit", description="Kernel bandit experiments.")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named preset applied before --config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("basis", help="P-greedy points and power-function decay")
    sub.add_parser("design", help="G-optimal design on the basis features")
    sub.add_parser("run", help="one algorithm on one environment")
    sub.add_parser("bench", help="all kernels, dimensions, environments and algorithms")
    sub.add_parser("adv", help="APG-EXP3 on drifting adversarial sequences")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset,
                          {"seed": args.seed, "out_dir": args.out_dir, "threads": args.threads})
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "basis":
            return cmd_basis(cfg, out)
        if args.command == "design":
            return cmd_design(cfg, out)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "bench":
            return cmd_bench(cfg, out, cfg.threads)
        return cmd_adv(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
