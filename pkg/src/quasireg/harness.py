"""Replicated experiments: datasets -> posteriors -> error records -> checks.

A config is a YAML mapping whose keys are exactly the fields of
:class:`ExperimentConfig`::

    model: {name: canonical, blocks: [1, 2]}
    n: 100
    betas: [1.0, 2.0]
    replicates: 300
    mcmc: {n_chains: 4, n_burnin: 2000, n_draws: 8000, thin: 8}
    n_eval: 4000
    master_seed: 1
    output_dir: results/canonical

Replicate ``r`` trains on a dataset seeded by stream ``(master_seed, r, DATA)``;
the sampler for the ``k``-th inverse temperature uses ``(master_seed, r, MCMC, k)``
and the generalization-error sample uses ``(master_seed, r, EVAL, k)``. All
inverse temperatures share the replicate's dataset.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import _rng
from .error_estimators import ErrorRecord, error_record, gen_from_train
from .exceptions import ConfigError, EstimationError, InvalidArgumentError
from .invariant_estimators import (
    InvariantEstimate,
    estimate_nu_from_v,
    rlct_symbolic,
    solve_lambda_nu_two_beta,
)
from .model_zoo import ModelInstance, make_model, sample_true
from .posterior_mcmc import McmcConfig, sample_posterior_many

log = logging.getLogger(__name__)

RECORD_FIELDS = ("g_n", "t_n", "v_n", "ewkn", "n", "beta", "mc_se")
DIAG_FIELDS = ("acceptance", "rhat_max", "ess_min")
# replicates sampled together in one vectorised sampler call
BATCH = 100
MAX_FAILURE_FRACTION = 0.05
REL_TOL = 0.25
SYMMETRY_TOL = 0.3
N_SE = 3.0


@dataclass
class ExperimentConfig:
    model: dict
    n: int
    betas: list
    replicates: int = 1
    mcmc: dict = field(default_factory=dict)
    n_eval: int = 20_000
    master_seed: int = 0
    output_dir: str = "results"
    laplace: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.model, dict) or "name" not in self.model:
            raise ConfigError("model must be a mapping with a 'name'")
        if not self.betas:
            raise ConfigError("betas must list at least one inverse temperature")
        self.betas = [float(b) for b in self.betas]
        if any(not (b > 0 and math.isfinite(b)) for b in self.betas):
            raise ConfigError("every beta must be positive")
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")
        if int(self.n) < 10:
            raise ConfigError("n must be >= 10")
        self.n, self.replicates = int(self.n), int(self.replicates)
        self.n_eval, self.master_seed = int(self.n_eval), int(self.master_seed)
        bad = {"beta", "seed"} & set(self.mcmc)
        if bad:
            raise ConfigError(f"mcmc.{sorted(bad)[0]} is set per run from betas/master_seed")
        try:
            tpl = self.mcmc_template()
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"mcmc: {exc}") from None
        if tpl.total_draws < 1000:
            raise ConfigError("mcmc must retain at least 1000 draws (n_chains * n_draws / thin)")
        self.build_model()
        unknown = set(self.laplace) - {"t_grid", "mc_per_t"}
        if unknown:
            raise ConfigError(f"unknown laplace key(s): {sorted(unknown)}")

    def mcmc_template(self) -> McmcConfig:
        return McmcConfig(**self.mcmc)

    def build_model(self) -> ModelInstance:
        params = dict(self.model)
        name = params.pop("name")
        try:
            return make_model(name, **params)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"model: {exc}") from None

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        missing = {"model", "n", "betas"} - set(raw)
        if missing:
            raise ConfigError(f"missing config key(s): {sorted(missing)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReplicateRecord:
    replicate: int
    beta_index: int
    record: ErrorRecord | None
    data_seed: str
    mcmc_seed: str
    eval_seed: str
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class Check:
    name: str
    value: float
    target: float
    tolerance: float
    passed: bool
    rule: str

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.value:.6g} vs {self.target:.6g} (tol {self.tolerance:.3g}; {self.rule})"


@dataclass
class BetaSummary:
    beta: float
    n_ok: int
    n_failed: int
    mean: dict
    se: dict  # values are None when only one replicate succeeded


@dataclass
class AggregateResult:
    config: ExperimentConfig
    model_name: str
    d: int
    g: int | None
    records: list
    per_beta: list
    estimates: dict
    checks: list
    theory: dict | None

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _seed_label(master, *keys) -> str:
    return "/".join(str(k) for k in (master,) + keys)


def _run_chunk(args):
    """Worker: sample and score a contiguous range of replicates at one beta."""
    cfg_dict, k, reps = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.build_model()
    beta = cfg.betas[k]
    mcmc = cfg.mcmc_template().replace(beta=beta)
    master = cfg.master_seed
    datasets = [sample_true(model, cfg.n, _rng.child(master, r, _rng.DATA)) for r in reps]
    mcmc_seeds = [_rng.child(master, r, _rng.MCMC, k) for r in reps]

    try:
        posts = sample_posterior_many(model, datasets, mcmc, seeds=mcmc_seeds)
    except (RuntimeError, ValueError) as exc:
        if len(reps) == 1:
            posts = [exc]
        else:
            # isolate the failing replicate(s); per-chain streams make this exact
            posts = []
            for ds, s in zip(datasets, mcmc_seeds):
                try:
                    posts.append(sample_posterior_many(model, [ds], mcmc, seeds=[s])[0])
                except (RuntimeError, ValueError) as inner:
                    posts.append(inner)

    out = []
    for r, ds, post in zip(reps, datasets, posts):
        rec = ReplicateRecord(
            replicate=r,
            beta_index=k,
            record=None,
            data_seed=_seed_label(master, r, _rng.DATA),
            mcmc_seed=_seed_label(master, r, _rng.MCMC, k),
            eval_seed=_seed_label(master, r, _rng.EVAL, k),
        )
        if isinstance(post, Exception):
            rec.error = f"{type(post).__name__}: {post}"
        else:
            try:
                rec.record = error_record(model, ds, post, cfg.n_eval, _rng.child(master, r, _rng.EVAL, k))
                dg = post.diagnostics
                rec.diagnostics = {
                    "acceptance": float(np.mean(dg.acceptance)),
                    "rhat_max": float(np.nanmax(dg.rhat)) if np.any(np.isfinite(dg.rhat)) else float("nan"),
                    "ess_min": float(np.min(dg.ess)),
                }
            except (EstimationError, ValueError) as exc:
                rec.error = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), None
    if v.size == 1:
        return float(v[0]), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _tol(target, se):
    return max(REL_TOL * abs(target), N_SE * (se or 0.0))


def _summarise(cfg: ExperimentConfig, model: ModelInstance, records: list) -> AggregateResult:
    n = cfg.n
    per_beta = []
    by_beta = {}
    for k, beta in enumerate(cfg.betas):
        ok = [r for r in records if r.beta_index == k and r.record is not None]
        failed = sum(1 for r in records if r.beta_index == k and r.record is None)
        by_beta[k] = ok
        mean, se = {}, {}
        for name in ("g_n", "t_n", "v_n", "ewkn", "mc_se"):
            mean[name], se[name] = _mean_se([getattr(r.record, name) for r in ok])
        mean["gen_from_train"], se["gen_from_train"] = _mean_se([gen_from_train(r.record) for r in ok])
        for name in DIAG_FIELDS:
            mean[name], se[name] = _mean_se([r.diagnostics[name] for r in ok])
        per_beta.append(BetaSummary(beta, len(ok), failed, mean, se))

    g = model.g
    theory = None
    if g is not None:
        sym = rlct_symbolic(model.blocks)
        theory = {
            "lambda": float(sym.lambda_hat),
            "nu": float(sym.nu_hat),
            "m": int(sym.m_hat),
            "lambda_exact": str(sym.lambda_hat),
            "g_over_2n": g / (2 * n),
            "per_beta": [
                {
                    "beta": b,
                    "g_n": ((sym.lambda_hat - sym.nu_hat) / b + sym.nu_hat) / n,
                    "t_n": ((sym.lambda_hat - sym.nu_hat) / b - sym.nu_hat) / n,
                    "ewkn": (sym.lambda_hat / b - sym.nu_hat) / n,
                }
                for b in cfg.betas
            ],
        }
        theory["per_beta"] = [{k: float(v) for k, v in row.items()} for row in theory["per_beta"]]

    estimates = {}
    for s in per_beta:
        if s.n_ok:
            estimates[f"v_n_average@beta={s.beta:g}"] = estimate_nu_from_v(s.mean["v_n"], s.beta, s.se["v_n"])
    if g is not None:
        estimates["symbolic"] = rlct_symbolic(model.blocks)
    if len(cfg.betas) >= 2 and per_beta[0].n_ok and per_beta[1].n_ok and cfg.betas[0] != cfg.betas[1]:
        s1, s2 = per_beta[0], per_beta[1]
        paired = {r.replicate: r.record.ewkn for r in by_beta[0]}
        pairs = [(paired[r.replicate], r.record.ewkn) for r in by_beta[1] if r.replicate in paired]
        cov12 = 0.0
        if len(pairs) > 1:
            a = np.asarray(pairs)
            cov12 = float(np.cov(a.T, ddof=1)[0, 1] / len(pairs))
        estimates["two_beta"] = solve_lambda_nu_two_beta(
            s1.mean["ewkn"], s1.beta, s2.mean["ewkn"], s2.beta, n, s1.se["ewkn"], s2.se["ewkn"], cov12
        )

    checks = []
    for s in per_beta:
        if not s.n_ok:
            continue
        tag = f"beta={s.beta:g}"
        g_bar, t_bar = s.mean["g_n"], s.mean["t_n"]
        gft = s.mean["gen_from_train"]
        if s.se["g_n"] is not None:
            comb = math.hypot(s.se["g_n"], s.se["gen_from_train"])
            checks.append(Check(f"waic_identity {tag}", g_bar, gft, 2 * comb, abs(g_bar - gft) < 2 * comb,
                                "|G - (T + beta V / n)| < 2 combined SE"))
        if g is not None:
            half = g / (2 * n)
            checks.append(Check(f"symmetry {tag}", g_bar + t_bar, 0.0, SYMMETRY_TOL * half,
                                abs(g_bar + t_bar) < SYMMETRY_TOL * half, "|G + T| < 0.3 g/(2n)"))
            row = theory["per_beta"][cfg.betas.index(s.beta)]
            for key, label in (("g_n", "generalization"), ("t_n", "training")):
                tol = _tol(row[key], s.se[key])
                val = s.mean[key]
                checks.append(Check(f"{label}_theory {tag}", val, row[key], tol, abs(val - row[key]) <= tol,
                                    "max(25% relative, 3 SE)"))
            nu_est = estimates[f"v_n_average@{tag}"]
            tol = _tol(theory["nu"], nu_est.se.get("nu"))
            checks.append(Check(f"nu_from_v {tag}", nu_est.nu_hat, theory["nu"], tol,
                                abs(nu_est.nu_hat - theory["nu"]) <= tol, "max(25% relative, 3 SE)"))
    if g is not None and "two_beta" in estimates:
        est = estimates["two_beta"]
        for key, val in (("lambda", est.lambda_hat), ("nu", est.nu_hat)):
            tol = _tol(theory[key], est.se.get(key))
            checks.append(Check(f"two_beta_{key}", val, theory[key], tol, abs(val - theory[key]) <= tol,
                                "max(25% relative, 3 SE)"))

    return AggregateResult(cfg, model.name, model.d, g, records, per_beta, estimates, checks, theory)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> AggregateResult:
    """Run every replicate at every inverse temperature and aggregate.

    Work is split into chunks of replicates; chunks run in a process pool
    when ``workers > 1``. Results are identical for any worker count.
    """
    model = cfg.build_model()
    workers = int(workers or os.environ.get("QUASIREG_WORKERS", 1) or 1)
    cfg_dict = cfg.to_dict()
    jobs = [
        (cfg_dict, k, list(range(start, min(start + BATCH, cfg.replicates))))
        for k in range(len(cfg.betas))
        for start in range(0, cfg.replicates, BATCH)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chunk, jobs))
    else:
        chunks = [_run_chunk(job) for job in jobs]
    records = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r.replicate, r.beta_index))

    failed = sum(r.record is None for r in records)
    if failed:
        log.warning("%d of %d replicate runs failed and were excluded", failed, len(records))
    if failed > MAX_FAILURE_FRACTION * len(records):
        raise RuntimeError(f"{failed} of {len(records)} replicate runs failed; aborting aggregate")
    return _summarise(cfg, model, records)


# ---------------------------------------------------------------- export


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


CSV_COLUMNS = (
    ("replicate", "beta_index")
    + RECORD_FIELDS
    + ("gen_from_train",)
    + DIAG_FIELDS
    + ("data_seed", "mcmc_seed", "eval_seed", "error")
)


def _jsonable(obj):
    if isinstance(obj, InvariantEstimate):
        return {
            "method": obj.method,
            "lambda_hat": _jsonable(obj.lambda_hat),
            "nu_hat": _jsonable(obj.nu_hat),
            "m_hat": _jsonable(obj.m_hat),
            "se": _jsonable(obj.se),
        }
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if obj is None or isinstance(obj, str):
        return obj
    try:
        val = float(obj)
    except (TypeError, ValueError):
        return str(obj)
    return val if math.isfinite(val) else None


def _plot_script(agg: AggregateResult) -> str:
    lines = [
        "# gnuplot script: mean generalization / training error per inverse temperature",
        f"# model {agg.model_name}, n = {agg.config.n}, replicates = {agg.config.replicates}",
        "$errors << EOD",
        "# beta  G_mean  G_se  T_mean  T_se  GfromT_mean",
    ]
    for s in agg.per_beta:
        lines.append(" ".join(_fmt(v if v is not None else 0.0) for v in (
            s.beta, s.mean["g_n"], s.se["g_n"], s.mean["t_n"], s.se["t_n"], s.mean["gen_from_train"])))
    lines += ["EOD", "set xlabel 'inverse temperature beta'", "set ylabel 'nats'", "set key outside",
              "set logscale x", "set xrange [*:*]"]
    plots = [
        "$errors using 1:2:3 with yerrorbars title 'mean G_n'",
        "$errors using 1:4:5 with yerrorbars title 'mean T_n'",
        "$errors using 1:6 with points title 'mean T_n + beta V_n / n'",
    ]
    if agg.theory is not None:
        half = _fmt(agg.theory["g_over_2n"])
        plots += [f"{half} with lines title 'g/(2n)'", f"-{half} with lines title '-g/(2n)'"]
    lines.append("plot " + ", \\\n     ".join(plots))
    lines.append("pause -1")
    return "\n".join(lines) + "\n"


def export_results(agg: AggregateResult, directory) -> dict:
    """Write ``records.csv``, ``summary.json`` and ``plots.gp``; return their paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / k for k in ("records.csv", "summary.json", "plots.gp")}

    with open(paths["records.csv"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in agg.records:
            rec = r.record
            row = [r.replicate, r.beta_index]
            row += [getattr(rec, f) if rec else None for f in RECORD_FIELDS]
            row.append(gen_from_train(rec) if rec else None)
            row += [r.diagnostics.get(f) for f in DIAG_FIELDS]
            writer.writerow([_fmt(v) for v in row] + [r.data_seed, r.mcmc_seed, r.eval_seed, r.error or ""])

    summary = {
        "config": agg.config.to_dict(),
        "model": {"name": agg.model_name, "d": agg.d, "g": agg.g},
        "per_beta": [asdict(s) for s in agg.per_beta],
        "estimates": agg.estimates,
        "checks": [asdict(c) for c in agg.checks],
        "all_passed": agg.all_passed,
        "theory": agg.theory,
        "tolerance_policy": {
            "theory": "max(25% relative, 3 aggregate SE); finite-n bands, not asymptotic claims",
            "symmetry": "|mean G + mean T| < 0.3 g/(2n)",
            "waic_identity": "|mean G - mean(T + beta V / n)| < 2 combined SE",
        },
        "failures": sum(r.record is None for r in agg.records),
    }
    with open(paths["summary.json"], "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=False)
        fh.write("\n")

    paths["plots.gp"].write_text(_plot_script(agg), encoding="utf-8")
    return paths


def read_records(path) -> list[dict]:
    """Parse ``records.csv`` back into typed rows."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, val in raw.items():
                if key in ("replicate", "beta_index", "n"):
                    row[key] = int(val) if val else None
                elif key in ("data_seed", "mcmc_seed", "eval_seed", "error"):
                    row[key] = val
                else:
                    row[key] = float(val) if val else None
            rows.append(row)
    return rows
