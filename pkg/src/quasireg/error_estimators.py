"""Generalization error, training error, functional variance and E_w[K_n].

All quantities are in nats and are computed from posterior draws. The
predictive density is the posterior average of ``p(x|w)``, evaluated in log
space with a max-shift so that very negative log densities do not underflow.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _rng
from .exceptions import EstimationError, InvalidArgumentError
from .model_zoo import Dataset, ModelInstance
from .posterior_mcmc import PosteriorDraws

# cap on (draws x evaluation points) held in memory at once
_BLOCK_ELEMS = 4_000_000


@dataclass
class ErrorRecord:
    g_n: float
    t_n: float
    v_n: float
    ewkn: float
    n: int
    beta: float
    mc_se: float

    def __post_init__(self):
        vals = (self.g_n, self.t_n, self.v_n, self.ewkn, self.mc_se)
        if not all(np.isfinite(v) for v in vals):
            raise EstimationError(f"non-finite field in {self}")
        if self.v_n < 0:
            raise EstimationError("functional variance must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)


def _log_p_matrix(draws: PosteriorDraws, x) -> np.ndarray:
    lp = draws.model.log_p(np.atleast_2d(x), draws.draws)
    bad = ~np.isfinite(lp) & ~np.isneginf(lp)
    if bad.any():
        s, i = np.argwhere(bad)[0]
        raise EstimationError(f"log p is {lp[s, i]} at draw {s}, observation {i}")
    return lp


def _log_mean_exp(lp: np.ndarray) -> np.ndarray:
    """Column-wise ``log(mean(exp(lp)))`` over the draw axis, shifted by the column max."""
    top = lp.max(axis=0)
    shift = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.mean(np.exp(lp - shift), axis=0)) + shift


def predictive_log_density(draws: PosteriorDraws, x) -> np.ndarray | float:
    """``log E_w[p(x|w)]`` for one observation ``(N,)`` or a batch ``(m, N)``.

    An observation impossible under every draw yields ``-inf``; the
    error estimators treat that value as a failure.
    """
    if len(draws) == 0:
        raise InvalidArgumentError("no draws")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    step = max(1, _BLOCK_ELEMS // len(draws))
    out = np.concatenate(
        [_log_mean_exp(_log_p_matrix(draws, x2[i : i + step])) for i in range(0, len(x2), step)]
    )
    return float(out[0]) if single else out


def _check_pred(pred: np.ndarray, what: str):
    if np.any(np.isneginf(pred)):
        raise EstimationError(f"{what}: observation {int(np.argmax(np.isneginf(pred)))} has zero predictive density")


def generalization_error(model: ModelInstance, draws: PosteriorDraws, n_eval: int = 20_000, seed=0):
    """Fresh-sample Monte Carlo estimate of ``KL(q || predictive)``.

    Returns ``(g_n, mc_se)``. ``seed`` must address a stream not used for the
    training data or the sampler.
    """
    if n_eval < 1000:
        raise InvalidArgumentError("n_eval must be >= 1000")
    x = model.sample_x(_rng.generator(seed), n_eval)
    pred = predictive_log_density(draws, x)
    _check_pred(pred, "generalization error")
    diff = model.log_q(x) - pred
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_eval))


def training_error(model: ModelInstance, data: Dataset, draws: PosteriorDraws) -> float:
    x = data.observations
    pred = predictive_log_density(draws, x)
    _check_pred(pred, "training error")
    return float(np.mean(model.log_q(x) - pred))


def functional_variance(model: ModelInstance, data: Dataset, draws: PosteriorDraws) -> float:
    """Sum over training points of the posterior variance of ``log p(X_i|w)``."""
    lp = _log_p_matrix(draws, data.observations)
    return float(np.sum(np.var(lp, axis=0)))


def posterior_mean_empirical_loss(model: ModelInstance, data: Dataset, draws: PosteriorDraws) -> float:
    """``E_w[K_n(w)]`` with ``K_n(w) = mean_i [log q(X_i) - log p(X_i|w)]``."""
    x = data.observations
    lp = _log_p_matrix(draws, x)
    kn = np.mean(model.log_q(x)[None, :] - lp, axis=1)
    return float(kn.mean())


def gen_from_train(record: ErrorRecord) -> float:
    """Estimate of the generalization error from training quantities alone."""
    return record.t_n + record.beta * record.v_n / record.n


def error_record(model: ModelInstance, data: Dataset, draws: PosteriorDraws, n_eval: int = 20_000, seed=0) -> ErrorRecord:
    """All four statistics for one training set, sharing one ``log p`` matrix."""
    x = data.observations
    lp = _log_p_matrix(draws, x)
    lq = model.log_q(x)
    pred = _log_mean_exp(lp)
    _check_pred(pred, "training error")
    g_n, mc_se = generalization_error(model, draws, n_eval, seed)
    return ErrorRecord(
        g_n=g_n,
        t_n=float(np.mean(lq - pred)),
        v_n=float(np.sum(np.var(lp, axis=0))),
        ewkn=float(np.mean(np.mean(lq[None, :] - lp, axis=1))),
        n=data.n,
        beta=draws.beta,
        mc_se=mc_se,
    )
