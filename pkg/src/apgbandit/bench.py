"""Seeded experiment execution and result files."""
from __future__ import annotations

import csv
import logging
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import Config, KernelSpec
from .environments import NoiseStream, SyntheticEnv, benchmark_noise, generate_env
from .rkhs import ApgConfig, RegretCurve, apg_run, igp_ucb_run

log = logging.getLogger(__name__)

RUN_COLUMNS = ("round", "arm", "regret", "cumulative_regret", "normalized_regret")
TIMING_COLUMNS = ("kernel", "d", "env", "algorithm", "basis_size", "setup_s", "loop_s", "total_s")


def normalize(cumulative: np.ndarray, env: SyntheticEnv) -> np.ndarray:
    """Cumulative regret in units of the expected per-round regret of uniform play."""
    gap = env.mean_gap()
    if gap <= 0.0:
        log.warning("reward function is constant over the arms; regret left unnormalised")
        return np.array(cumulative, dtype=float)
    return np.asarray(cumulative, dtype=float) / gap


def default_threads() -> int:
    try:
        return max(len(os.sched_getaffinity(0)), 1)
    except AttributeError:
        return os.cpu_count() or 1


def _seed(cfg: Config, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.seed, spawn_key=tuple(int(k) for k in key))


def make_envs(cfg: Config, spec: KernelSpec, kernel_index: int, d: int) -> list[SyntheticEnv]:
    kernel = spec.build(d)
    m = cfg.env.grid.get(d)
    return [
        generate_env(
            kernel,
            d,
            seed=_seed(cfg, kernel_index, d, e),
            m=m,
            l1_mode=cfg.env.l1_mode,
            noise_fraction=cfg.env.noise_fraction,
            max_centers=cfg.env.max_centers,
        )
        for e in range(cfg.env.n_envs)
    ]


def apg_config(cfg: Config, algorithm: str, T: int, R: float) -> ApgConfig:
    a = cfg.apg
    return ApgConfig(
        algorithm=algorithm.upper().removeprefix("APG-"),
        T=T, q=a.q, alpha=a.alpha, lam=a.lam, R=a.R if a.R is not None else R, B=a.B,
        delta=a.delta, design_tol=a.design_tol, pe_constant=a.pe_constant, eta=a.eta,
        max_points=a.max_points,
    )


def run_algorithm(cfg: Config, algorithm: str, env: SyntheticEnv, T: int, R: float, noise_seed, rng_seed) -> RegretCurve:
    """One stochastic run; identical noise for every algorithm sharing ``noise_seed``."""
    noise = NoiseStream(noise_seed)
    if algorithm.upper() == "IGP-UCB":
        g = cfg.igp
        return igp_ucb_run(
            env.kernel, env.arms, env, noise, T,
            R=g.R if g.R is not None else R, B=g.B, delta=g.delta, lam=g.lam, mode=g.mode,
        )
    return apg_run(apg_config(cfg, algorithm, T, R), env.kernel, env.arms, env, noise, np.random.default_rng(rng_seed))


@dataclass
class Job:
    kernel_index: int
    label: str
    d: int
    env_index: int
    algorithm: str


@dataclass
class JobResult:
    job: Job
    curve: RegretCurve | None
    normalized: np.ndarray | None
    error: str | None = None


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _run_slug(job: Job) -> str:
    return f"{job.label}_d{job.d}_env{job.env_index}_{job.algorithm}"


def bench_paper(cfg: Config, out_dir: str | Path | None = None, threads: int | None = None) -> dict:
    """Every (kernel, d, environment, algorithm) run; writes result files and returns a summary.

    Regret files depend only on the configuration, never on timing or the
    number of worker threads.  Wall times go to ``timing.csv`` and
    ``timing/``.
    """
    out = Path(out_dir or cfg.out_dir)
    threads = threads or cfg.threads or default_threads()
    chash = cfg.hash()
    T = cfg.bench.T
    header = [f"config_hash={chash}", f"seed={cfg.seed}", f"T={T}"]
    algorithms = [a.upper() for a in cfg.bench.algorithms]

    groups = []
    for ki, spec in enumerate(cfg.bench.kernels):
        for d in cfg.bench.dims:
            envs = make_envs(cfg, spec, ki, d)
            groups.append((ki, spec, d, envs, benchmark_noise(envs)))

    jobs: list[tuple[Job, SyntheticEnv, float]] = []
    for ki, spec, d, envs, R in groups:
        for e, env in enumerate(envs):
            for alg in algorithms:
                jobs.append((Job(ki, spec.label(), d, e, alg), env, R))

    def work(item):
        job, env, R = item
        try:
            curve = run_algorithm(
                cfg, job.algorithm, env, T, R,
                noise_seed=_seed(cfg, job.kernel_index, job.d, job.env_index, 1),
                rng_seed=_seed(cfg, job.kernel_index, job.d, job.env_index, 2, algorithms.index(job.algorithm)),
            )
        except Exception as exc:  # recorded, bench continues
            log.error("run %s failed: %s", _run_slug(job), exc)
            return JobResult(job, None, None, "".join(traceback.format_exception_only(type(exc), exc)).strip())
        return JobResult(job, curve, normalize(curve.cumulative, env))

    # single-threaded BLAS inside runs keeps every reduction order fixed
    with threadpool_limits(1), ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, jobs))

    timing_rows = []
    failures = []
    for res in results:
        job = res.job
        slug = _run_slug(job)
        meta = [f"kernel={job.label}", f"d={job.d}", f"env={job.env_index}", f"algorithm={job.algorithm}"]
        if res.curve is None:
            failures.append((slug, res.error))
            continue
        c = res.curve
        cum = c.cumulative
        _write_csv(
            out / "runs" / f"{slug}.csv", header + meta, RUN_COLUMNS,
            zip(range(1, c.T + 1), c.arms, c.instant, cum, res.normalized),
        )
        _write_csv(
            out / "timing" / f"{slug}.csv", header + meta, ("round", "elapsed_s"),
            zip(range(1, c.T + 1), c.elapsed),
        )
        timing_rows.append((job.label, job.d, job.env_index, job.algorithm,
                            c.basis_size if c.basis_size is not None else "", c.setup_time, c.loop_time, c.total_time))

    summary = {}
    summary_rows = []
    for ki, spec, d, envs, R in groups:
        label = spec.label()
        cols, curves = [], []
        for alg in algorithms:
            norm = [r.normalized for r in results
                    if r.curve is not None and r.job.kernel_index == ki and r.job.d == d and r.job.algorithm == alg]
            if not norm:
                continue
            M = np.vstack(norm)
            mean, sd = M.mean(axis=0), M.std(axis=0)
            cols += [f"{alg}_mean", f"{alg}_sd"]
            curves += [mean, sd]
            summary[(label, d, alg)] = {"final_mean": float(mean[-1]), "final_sd": float(sd[-1]), "runs": len(norm),
                                        "finals": M[:, -1].copy(), "mean_curve": mean}
            summary_rows.append((label, d, alg, len(norm), R, mean[-1], sd[-1]))
        if curves:
            _write_csv(out / f"mean_{label}_d{d}.csv", header + [f"kernel={label}", f"d={d}"],
                       ["round"] + cols, zip(range(1, T + 1), *curves))
    _write_csv(out / "summary.csv", header,
               ("kernel", "d", "algorithm", "runs", "R", "normalized_regret_mean", "normalized_regret_sd"), summary_rows)
    _write_csv(out / "timing.csv", header, TIMING_COLUMNS, timing_rows)
    _write_timing_table(out / "timing_table.csv", header, timing_rows, algorithms)
    _write_plot_script(out, groups, algorithms)
    if failures:
        _write_csv(out / "failures.csv", header, ("run", "error"), failures)
    return {"summary": summary, "timing": timing_rows, "failures": failures, "out_dir": out, "config_hash": chash}


def _write_timing_table(path: Path, header, timing_rows, algorithms) -> None:
    """Mean total seconds per algorithm (rows) and kernel/d (columns)."""
    keys = []
    for label, d, *_ in timing_rows:
        if (label, d) not in keys:
            keys.append((label, d))
    rows = []
    for alg in algorithms:
        row = [alg]
        for key in keys:
            t = [r[7] for r in timing_rows if (r[0], r[1]) == key and r[3] == alg]
            row.append(float(np.mean(t)) if t else "")
        rows.append(row)
    _write_csv(path, header, ["algorithm"] + [f"{k}_d{d}" for k, d in keys], rows)


def _write_plot_script(out: Path, groups, algorithms) -> None:
    lines = ["set datafile separator ','", "set datafile columnheaders", "set key left top", "set xlabel 'round'",
             "set ylabel 'normalized cumulative regret'", "set terminal pngcairo size 800,600"]
    for _, spec, d, _, _ in groups:
        label = spec.label()
        fname = f"mean_{label}_d{d}.csv"
        lines.append(f"set output 'regret_{label}_d{d}.png'")
        lines.append(f"set title '{label}, d={d}'")
        plots = [f"'{fname}' using 1:{2 + 2 * i} with lines title '{alg}'" for i, alg in enumerate(algorithms)]
        lines.append("plot " + ", \\\n     ".join(plots))
    (out / "plot.gp").write_text("\n".join(lines) + "\n")
