"""Tempered-posterior sampling by adaptive random-walk Metropolis.

The target at inverse temperature ``beta`` is

    p(w | X^n)  ∝  prod_i p(X_i | w)^beta * prior(w),   w in the parameter box.

Chains are advanced in lock-step as numpy arrays of shape
``(datasets, chains, temper_levels, d)``, so one call can sample the
posteriors of many replicate datasets at once. Each (dataset, chain) pair owns
its own random stream, which makes a batched run reproduce the corresponding
single-dataset runs exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _rng
from .exceptions import (
    AdaptationError,
    EstimationError,
    InitializationError,
    InvalidArgumentError,
)
from .model_zoo import Dataset, ModelInstance

# hottest rung sits at beta / LADDER_SPAN
LADDER_SPAN = 8.0
_CHUNK = 256
_SD_WARMUP = 200


@dataclass(frozen=True)
class McmcConfig:
    beta: float = 1.0
    n_chains: int = 4
    n_burnin: int = 5000
    n_draws: int = 20000
    thin: int = 4
    n_temper_levels: int = 4
    target_accept: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InvalidArgumentError(f"beta must be positive and finite, got {self.beta}")
        if self.n_chains < 1 or self.n_temper_levels < 1 or self.thin < 1:
            raise InvalidArgumentError("n_chains, n_temper_levels and thin must be >= 1")
        if self.n_burnin < 0 or self.n_draws < self.thin:
            raise InvalidArgumentError("need n_burnin >= 0 and n_draws >= thin")
        if not 0 < self.target_accept < 1:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")

    @property
    def draws_per_chain(self) -> int:
        return self.n_draws // self.thin

    @property
    def total_draws(self) -> int:
        return self.draws_per_chain * self.n_chains

    def replace(self, **changes) -> McmcConfig:
        fields = dict(self.__dict__)
        fields.update(changes)
        return McmcConfig(**fields)


@dataclass
class McmcDiagnostics:
    acceptance: np.ndarray  # per chain, target rung, post burn-in
    swap_acceptance: np.ndarray | None  # per chain, between the two coldest rungs
    rhat: np.ndarray  # split-R-hat per identified coordinate
    ess: np.ndarray  # effective sample size per identified coordinate
    step_scale: np.ndarray  # frozen global proposal factor per chain


@dataclass
class PosteriorDraws:
    """Retained post-burn-in draws, kept per chain as ``(chains, draws, d)``."""

    chains: np.ndarray
    beta: float
    model: ModelInstance
    diagnostics: McmcDiagnostics | None = None

    @property
    def draws(self) -> np.ndarray:
        return self.chains.reshape(-1, self.chains.shape[-1])

    def __len__(self):
        return self.chains.shape[0] * self.chains.shape[1]

    @classmethod
    def from_points(cls, model: ModelInstance, w, beta: float = 1.0) -> PosteriorDraws:
        """Wrap fixed parameter points as a single pseudo-chain."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return cls(w[None], beta, model)


def temperature_ladder(beta: float, levels: int) -> np.ndarray:
    """Geometric ladder from ``beta`` down to ``beta / LADDER_SPAN``."""
    if levels == 1:
        return np.array([beta], dtype=float)
    return beta * LADDER_SPAN ** (-np.arange(levels) / (levels - 1))


def split_rhat(x: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction for ``x`` of shape ``(chains, draws, k)``."""
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    if half < 2:
        return np.full(x.shape[-1], np.nan)
    parts = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    within = parts.var(axis=1, ddof=1).mean(axis=0)
    between = half * parts.mean(axis=1).var(axis=0, ddof=1)
    var_hat = (half - 1) / half * within + between / half
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_hat / within)


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    x = np.asarray(x, dtype=float)
    m, n, k = x.shape
    if n < 4:
        return np.full(k, float(m * n))
    centred = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centred, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean(axis=0)
    var_hat = within * (n - 1) / n
    if m > 1:
        var_hat = var_hat + x.mean(axis=1).var(axis=0, ddof=1)
    out = np.empty(k)
    for j in range(k):
        if var_hat[j] <= 0:
            out[j] = float(m * n)
            continue
        rho = 1.0 - (within[j] - acov[:, :, j].mean(axis=0)) / var_hat[j]
        rho[0] = 1.0
        pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
        positive = np.flatnonzero(pairs <= 0)
        pairs = pairs[: positive[0]] if positive.size else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        out[j] = m * n / max(tau, 1.0 / np.log10(m * n + 10))
    return out


def _chain_streams(seeds, n_chains):
    return [[_rng.generator(s, c) for c in range(n_chains)] for s in seeds]


def _draw_chunk(streams, steps, levels, d):
    z, u, s = [], [], []
    for row in streams:
        zr, ur, sr = [], [], []
        for rng in row:
            zr.append(rng.standard_normal((steps, levels, d)))
            ur.append(rng.random((steps, levels)))
            sr.append(rng.random((steps, max(levels - 1, 1))))
        z.append(zr)
        u.append(ur)
        s.append(sr)
    # (steps, B, C, ...)
    return (
        np.moveaxis(np.asarray(z), 2, 0),
        np.moveaxis(np.asarray(u), 2, 0),
        np.moveaxis(np.asarray(s), 2, 0),
    )


def _run_batch(model: ModelInstance, datasets: Sequence[Dataset], cfg: McmcConfig, seeds):
    B, C, L, d = len(datasets), cfg.n_chains, cfg.n_temper_levels, model.d
    stacked = model.stack_summaries([model.summarize(ds.observations) for ds in datasets])
    betas = temperature_ladder(cfg.beta, L)
    streams = _chain_streams(seeds, C)

    w = np.asarray([[model.sample_prior(rng, L) for rng in row] for row in streams])

    def loglik(points):
        return model.loglik(points.reshape(B, C * L, d), stacked).reshape(B, C, L)

    ll = loglik(w)
    lp = model.prior_log_density(w)
    if not np.all(np.isfinite(ll + lp)):
        raise InitializationError("non-finite log posterior at the initial point")

    log_scale = np.full((B, C, L), math.log(2.38 / math.sqrt(d)))
    coord_sd = np.full((B, C, L, d), model.w_max / math.sqrt(3.0))
    run_mean = np.zeros((B, C, L, d))
    run_m2 = np.zeros((B, C, L, d))

    n_keep = cfg.draws_per_chain
    kept = np.empty((B, C, n_keep, d))
    burn_accepts = np.zeros((B, C))
    accepts = np.zeros((B, C))
    swap_accepts = np.zeros((B, C))
    swap_tries = 0
    total = cfg.n_burnin + n_keep * cfg.thin
    k = 0

    for start in range(0, total, _CHUNK):
        steps = min(_CHUNK, total - start)
        z, u, s = _draw_chunk(streams, steps, L, d)
        for i in range(steps):
            t = start + i
            burning = t < cfg.n_burnin

            prop = w + np.exp(log_scale)[..., None] * coord_sd * z[i]
            lp_prop = model.prior_log_density(prop)
            ll_prop = loglik(prop)
            with np.errstate(invalid="ignore"):
                log_alpha = betas * (ll_prop - ll) + (lp_prop - lp)
            log_alpha = np.where(np.isfinite(lp_prop), log_alpha, -np.inf)
            acc = np.log(u[i]) < log_alpha
            w = np.where(acc[..., None], prop, w)
            ll = np.where(acc, ll_prop, ll)
            lp = np.where(acc, lp_prop, lp)

            if burning:
                burn_accepts += acc[..., 0]
                log_scale += (t + 1) ** -0.6 * (acc - cfg.target_accept)
                delta = w - run_mean
                run_mean += delta / (t + 1)
                run_m2 += delta * (w - run_mean)
                if t >= _SD_WARMUP and t % 50 == 0:
                    coord_sd = np.sqrt(run_m2 / t) + 1e-3 * model.w_max
            else:
                accepts += acc[..., 0]

            if L > 1:
                first = t % 2
                lo = np.arange(first, L - 1, 2)
                if lo.size:
                    hi = lo + 1
                    log_r = (betas[lo] - betas[hi]) * (ll[..., hi] - ll[..., lo])
                    swap = np.log(s[i][..., lo]) < log_r
                    perm = np.broadcast_to(np.arange(L), (B, C, L)).copy()
                    perm[..., lo] = np.where(swap, hi, lo)
                    perm[..., hi] = np.where(swap, lo, hi)
                    w = np.take_along_axis(w, perm[..., None], axis=2)
                    ll = np.take_along_axis(ll, perm, axis=2)
                    lp = np.take_along_axis(lp, perm, axis=2)
                    if not burning and first == 0:
                        swap_accepts += swap[..., 0]
                        swap_tries += 1

            if not burning and (t - cfg.n_burnin + 1) % cfg.thin == 0:
                kept[:, :, k] = w[:, :, 0]
                k += 1

    if cfg.n_burnin > 0 and np.any(burn_accepts == 0):
        raise AdaptationError("a chain rejected every burn-in proposal")

    n_post = total - cfg.n_burnin
    acceptance = accepts / n_post
    swap_rate = swap_accepts / swap_tries if swap_tries else None
    return kept, acceptance, swap_rate, np.exp(log_scale[..., 0])


def _diagnose(model, chains, acceptance, swap_rate, scale) -> McmcDiagnostics:
    ident = model.identified(chains)
    return McmcDiagnostics(
        acceptance=acceptance,
        swap_acceptance=swap_rate,
        rhat=split_rhat(ident),
        ess=effective_sample_size(ident),
        step_scale=scale,
    )


def sample_posterior_many(
    model: ModelInstance, datasets: Sequence[Dataset], cfg: McmcConfig, seeds=None
) -> list[PosteriorDraws]:
    """Sample the tempered posterior for several datasets in one vectorised run.

    ``seeds`` gives one root seed per dataset (default: ``cfg.seed`` for all);
    chain ``c`` of dataset ``b`` uses the stream ``(seeds[b], c)``.
    """
    datasets = list(datasets)
    if not datasets:
        return []
    if any(ds.obs_dim != model.obs_dim for ds in datasets if ds.n):
        raise InvalidArgumentError(f"observations do not match {model.name} (dim {model.obs_dim})")
    if len({ds.n for ds in datasets}) != 1:
        raise InvalidArgumentError("batched datasets must share the same n")
    seeds = [cfg.seed] * len(datasets) if seeds is None else list(seeds)
    kept, acceptance, swap_rate, scale = _run_batch(model, datasets, cfg, seeds)
    out = []
    for b in range(len(datasets)):
        diag = _diagnose(
            model, kept[b], acceptance[b], None if swap_rate is None else swap_rate[b], scale[b]
        )
        out.append(PosteriorDraws(kept[b], cfg.beta, model, diag))
    return out


def sample_posterior(model: ModelInstance, data: Dataset, cfg: McmcConfig) -> PosteriorDraws:
    """Draws from ``prod_i p(X_i|w)^beta * prior(w)`` restricted to the box.

    Step sizes adapt only during burn-in and are frozen afterwards. With more
    than one temper level, neighbouring rungs propose state swaps on
    alternating even/odd pairs and only the ``beta`` rung is returned.
    """
    return sample_posterior_many(model, [data], cfg)[0]


def posterior_expectation(draws: PosteriorDraws, h: Callable) -> float:
    """Sample mean of ``h`` over the draws.

    ``h`` receives the ``(S, d)`` draw array and may return ``(S,)`` values or
    a scalar constant.
    """
    w = draws.draws
    if w.shape[0] == 0:
        raise InvalidArgumentError("no draws")
    vals = np.broadcast_to(np.asarray(h(w), dtype=float), (w.shape[0],))
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise EstimationError(f"non-finite h at draw index {bad[0]}")
    return float(vals.mean())
