"""Built-in statistical models and the block-product parameter map.

Every model draws its observations from a standard Normal true distribution
(the true parameter is the origin), so ``log_q`` is shared. Models differ in
how the parameter enters the mean of the observation.

Array conventions used throughout the package:

* a parameter batch ``w`` has shape ``(..., d)``;
* an observation batch ``x`` has shape ``(m, N)``;
* ``log_p(x, w)`` returns shape ``(..., m)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from . import _rng
from .exceptions import InvalidArgumentError, UnsupportedModelError

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "BlockStructure",
    "Dataset",
    "ModelInstance",
    "GaussianMeanModel",
    "RegressionModel",
    "SandwichResult",
    "u_map",
    "make_model",
    "parse_model_spec",
    "sample_true",
    "check_sandwich",
    "MODEL_NAMES",
]


@dataclass(frozen=True)
class BlockStructure:
    """Partition of the parameter coordinates into consecutive blocks."""

    block_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes:
            raise InvalidArgumentError("at least one block is required")
        if any(s < 1 for s in sizes):
            raise InvalidArgumentError(f"block sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "block_sizes", sizes)

    @property
    def d(self) -> int:
        return sum(self.block_sizes)

    @property
    def g(self) -> int:
        return len(self.block_sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Cumulative offsets ``0 = d_0 <= d_1 <= ... <= d_g = d``."""
        return (0,) + tuple(np.cumsum(self.block_sizes).tolist())

    @classmethod
    def regular(cls, d: int) -> BlockStructure:
        return cls((1,) * d)

    def __str__(self):
        return ",".join(map(str, self.block_sizes))


def u_map(w, blocks: BlockStructure) -> np.ndarray:
    """Product of the coordinates inside each block.

    Works on a single point ``(d,)`` or a batch ``(..., d)``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 0 or w.shape[-1] != blocks.d:
        raise InvalidArgumentError(
            f"parameter has {w.shape[-1] if w.ndim else 0} coordinates, blocks need {blocks.d}"
        )
    return np.multiply.reduceat(w, list(blocks.offsets[:-1]), axis=-1)


@dataclass
class Dataset:
    observations: np.ndarray
    seed: object = None

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]


def _std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum(x * x, axis=-1) - 0.5 * x.shape[-1] * LOG_2PI


class ModelInstance:
    """A true distribution, a parametric family, a prior on a box, and K(w).

    Subclasses implement the likelihood; this base class holds the box prior
    (uniform on ``[-w_max, w_max]^d``) and the shared standard Normal truth.
    """

    name: str
    d: int
    obs_dim: int
    blocks: BlockStructure | None
    w_max: float
    known_lambda: float | None = None
    known_nu: float | None = None
    note: str = ""

    # true distribution

    def log_q(self, x) -> np.ndarray:
        return _std_normal_logpdf(x)

    def sample_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.obs_dim))

    # prior

    def in_box(self, w) -> np.ndarray:
        return np.all(np.abs(w) <= self.w_max, axis=-1)

    def prior_log_density(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        inside = self.in_box(w)
        return np.where(inside, -self.d * math.log(2.0 * self.w_max), -np.inf)

    def sample_prior(self, rng: np.random.Generator, size=()) -> np.ndarray:
        size = (size,) if isinstance(size, int) else tuple(size)
        return rng.uniform(-self.w_max, self.w_max, size=size + (self.d,))

    # likelihood

    def log_p(self, x, w) -> np.ndarray:
        raise NotImplementedError

    def kl(self, w) -> np.ndarray:
        raise NotImplementedError

    def summarize(self, x) -> tuple:
        """Per-dataset summary consumed by :meth:`loglik`."""
        return (np.asarray(x, dtype=float),)

    def stack_summaries(self, summaries) -> tuple:
        return tuple(np.stack(parts) for parts in zip(*summaries))

    def loglik(self, w, stacked) -> np.ndarray:
        """Summed log likelihood ``sum_i log p(X_i|w)``.

        ``w`` has shape ``(B, M, d)``; ``stacked`` holds ``B`` dataset summaries
        as built by :meth:`stack_summaries`. Returns shape ``(B, M)``.
        """
        (x,) = stacked
        out = np.empty(w.shape[:2])
        for b in range(w.shape[0]):
            out[b] = self.log_p(x[b], w[b]).sum(axis=-1)
        return out

    @property
    def g(self) -> int | None:
        return None if self.blocks is None else self.blocks.g

    def identified(self, w) -> np.ndarray:
        """Coordinates on which convergence diagnostics are meaningful."""
        return np.asarray(w) if self.blocks is None else u_map(w, self.blocks)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, d={self.d}, w_max={self.w_max})"


class GaussianMeanModel(ModelInstance):
    """``x ~ Normal(mean(w), I_N)``; K is available in closed form."""

    def __init__(self, name, d, obs_dim, mean_fn, blocks=None, w_max=1.0):
        self.name = name
        self.d = d
        self.obs_dim = obs_dim
        self.blocks = blocks
        self.w_max = float(w_max)
        self.mean_fn = mean_fn

    def log_p(self, x, w):
        x = np.asarray(x, dtype=float)
        mu = self.mean_fn(np.asarray(w, dtype=float))
        # ||x - mu||^2 expanded so the (..., m) result comes from one matmul
        sq = (
            np.sum(x * x, axis=-1)
            - 2.0 * mu @ x.T
            + np.sum(mu * mu, axis=-1)[..., None]
        )
        return -0.5 * sq - 0.5 * self.obs_dim * LOG_2PI

    def kl(self, w):
        mu = self.mean_fn(np.asarray(w, dtype=float))
        return 0.5 * np.sum(mu * mu, axis=-1)

    def summarize(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.obs_dim)
        return (np.float64(x.shape[0]), x.sum(axis=0), np.sum(x * x))

    def loglik(self, w, stacked):
        n, sx, sxx = stacked
        mu = self.mean_fn(w)
        cross = np.einsum("bmk,bk->bm", mu, sx)
        return (
            (-0.5 * self.obs_dim * LOG_2PI * n - 0.5 * sxx)[:, None]
            + cross
            - 0.5 * n[:, None] * np.sum(mu * mu, axis=-1)
        )


class ConjugateNormalModel(GaussianMeanModel):
    """1-D Normal mean with a Normal(0, prior_sd^2) prior.

    The prior is truncated to the box, but with the default ``w_max`` of ten
    prior standard deviations the truncated mass is below 1e-22, so the
    untruncated conjugate formulas are exact to double precision.
    """

    def __init__(self, prior_sd=1.0, w_max=10.0):
        super().__init__("conjugate1d", 1, 1, lambda w: w, blocks=BlockStructure((1,)), w_max=w_max)
        self.prior_sd = float(prior_sd)
        if self.prior_sd <= 0:
            raise InvalidArgumentError("prior_sd must be positive")
        z = self.w_max / self.prior_sd
        self._log_mass = math.log(ndtr(z) - ndtr(-z))

    def prior_log_density(self, w):
        w = np.asarray(w, dtype=float)
        s = self.prior_sd
        dens = -0.5 * (w[..., 0] / s) ** 2 - math.log(s) - 0.5 * LOG_2PI - self._log_mass
        return np.where(self.in_box(w), dens, -np.inf)

    def sample_prior(self, rng, size=()):
        size = (size,) if isinstance(size, int) else tuple(size)
        out = rng.normal(0.0, self.prior_sd, size=size + (1,))
        bad = np.abs(out) > self.w_max
        while bad.any():
            out[bad] = rng.normal(0.0, self.prior_sd, size=int(bad.sum()))
            bad = np.abs(out) > self.w_max
        return out

    def posterior(self, x, beta=1.0):
        """Closed-form tempered posterior ``(mean, variance)``."""
        x = np.asarray(x, dtype=float).ravel()
        prec = 1.0 / self.prior_sd**2 + beta * x.size
        return beta * x.sum() / prec, 1.0 / prec


class RegressionModel(ModelInstance):
    """``response = f(covariates, w) + Normal(0, 1)`` with standard Normal covariates.

    The observation vector is ``(covariates..., response)``. K(w) equals half
    the covariate-expectation of ``f^2``, computed with a tensor Gauss-Hermite
    rule.
    """

    def __init__(self, name, d, n_cov, mean_fn, blocks=None, w_max=1.0, gh_order=64):
        self.name = name
        self.d = d
        self.n_cov = n_cov
        self.obs_dim = n_cov + 1
        self.blocks = blocks
        self.w_max = float(w_max)
        self.mean_fn = mean_fn
        self.gh_order = int(gh_order)
        nodes, weights = np.polynomial.hermite_e.hermegauss(self.gh_order)
        weights = weights / math.sqrt(2.0 * math.pi)
        grids = np.meshgrid(*([nodes] * n_cov), indexing="ij")
        self._gh_nodes = np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*([weights] * n_cov), indexing="ij")
        self._gh_weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)

    def log_p(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        cov, y = x[:, : self.n_cov], x[:, self.n_cov]
        resid = y - self.mean_fn(cov, w)
        return _std_normal_logpdf(cov) - 0.5 * resid**2 - 0.5 * LOG_2PI

    def kl(self, w):
        w = np.asarray(w, dtype=float)
        flat = w.reshape(-1, self.d)
        step = max(1, 2_000_000 // len(self._gh_weights))
        out = np.empty(len(flat))
        for i in range(0, len(flat), step):
            f = self.mean_fn(self._gh_nodes, flat[i : i + step])
            out[i : i + step] = 0.5 * (f * f) @ self._gh_weights
        return out.reshape(w.shape[:-1])

    def loglik(self, w, stacked):
        (x,) = stacked
        cov, y = x[..., : self.n_cov], x[..., self.n_cov]
        base = np.sum(_std_normal_logpdf(cov), axis=-1) - 0.5 * y.shape[-1] * LOG_2PI
        # broadcast (B, M, .) parameters against (B, 1, n) data
        resid = y[:, None, :] - self.mean_fn(cov[:, None], w)
        return base[:, None] - 0.5 * np.sum(resid * resid, axis=-1)


class AdditiveRegressionModel(RegressionModel):
    """Regression whose mean is a sum of one-covariate terms.

    With independent covariates, ``E[(sum_j f_j)^2]`` needs only 1-D rules:
    ``sum_j E[f_j^2] + sum_{j != k} E[f_j] E[f_k]``.
    """

    def __init__(self, name, d, terms, mean_fn, blocks=None, w_max=1.0, gh_order=64):
        super().__init__(name, d, len(terms), mean_fn, blocks=blocks, w_max=w_max, gh_order=1)
        self.gh_order = int(gh_order)
        self.terms = tuple(terms)
        nodes, weights = np.polynomial.hermite_e.hermegauss(self.gh_order)
        self._nodes_1d = nodes
        self._weights_1d = weights / math.sqrt(2.0 * math.pi)

    def kl(self, w):
        w = np.asarray(w, dtype=float)
        first = []
        second = np.zeros(w.shape[:-1])
        for term in self.terms:
            f = term(self._nodes_1d, w)
            first.append(f @ self._weights_1d)
            second = second + (f * f) @ self._weights_1d
        total = sum(first)
        cross = total * total - sum(m * m for m in first)
        return 0.5 * (second + cross)


# mean functions: ``cov`` has shape (..., m, n_cov), ``w`` has shape (..., d) and
# each parameter is lifted to (..., 1) so it broadcasts over the m data points.

def _p(w, j):
    return w[..., j][..., None]


def _example1_mean(cov, w):
    x = cov[..., 0]
    return _p(w, 0) * x * x + _p(w, 1) * np.tanh(_p(w, 2) * x)


def _example2_mean(cov, w):
    x = cov[..., 0]
    return _p(w, 0) * x + _p(w, 1) * np.tanh(_p(w, 2) * x)


def _example3_x_part(x, w):
    return _p(w, 0) * np.sin(_p(w, 1) * x) + _p(w, 2) * x * np.sin(_p(w, 3) * x)


def _example3_y_part(y, w):
    return _p(w, 4) * np.sin(_p(w, 5) * y) + _p(w, 6) * y * np.sin(_p(w, 7) * y)


def _example3_mean(cov, w):
    return _example3_x_part(cov[..., 0], w) + _example3_y_part(cov[..., 1], w)


MODEL_NAMES = ("canonical", "example1", "example2", "example3", "regular", "conjugate1d")


def _check_blocks(name, given, expected):
    if given is not None and BlockStructure(tuple(given)) != expected:
        raise InvalidArgumentError(
            f"{name} has fixed blocks ({expected}); got ({BlockStructure(tuple(given))})"
        )


def make_model(name: str, blocks=None, d=None, w_max=None, gh_order=64, prior_sd=1.0) -> ModelInstance:
    """Construct a built-in model by name.

    ``canonical`` needs ``blocks``; ``regular`` needs ``d``. ``example1`` and
    ``example3`` accept ``blocks`` only if it matches their fixed partition.
    """
    w_max_box = 1.0 if w_max is None else float(w_max)
    if w_max_box <= 0:
        raise InvalidArgumentError("w_max must be positive")

    if name == "canonical":
        if blocks is None:
            raise InvalidArgumentError("canonical model needs blocks")
        bs = blocks if isinstance(blocks, BlockStructure) else BlockStructure(tuple(blocks))
        model = GaussianMeanModel(f"canonical({bs})", bs.d, bs.g, lambda w: u_map(w, bs), blocks=bs, w_max=w_max_box)
    elif name == "regular":
        if d is None:
            if blocks is None:
                raise InvalidArgumentError("regular model needs d")
            d = BlockStructure(tuple(blocks)).d
        d = int(d)
        if d < 1:
            raise InvalidArgumentError("d must be >= 1")
        bs = BlockStructure.regular(d)
        _check_blocks(name, blocks, bs)
        model = GaussianMeanModel(f"regular({d})", d, d, lambda w: w, blocks=bs, w_max=w_max_box)
    elif name == "conjugate1d":
        _check_blocks(name, blocks, BlockStructure((1,)))
        model = ConjugateNormalModel(prior_sd=prior_sd, w_max=10.0 * prior_sd if w_max is None else w_max)
    elif name == "example1":
        bs = BlockStructure((1, 2))
        _check_blocks(name, blocks, bs)
        model = RegressionModel("example1", 3, 1, _example1_mean, blocks=bs, w_max=w_max_box, gh_order=gh_order)
    elif name == "example2":
        if blocks is not None:
            raise InvalidArgumentError("example2 is not quasi-regular and takes no blocks")
        model = RegressionModel("example2", 3, 1, _example2_mean, blocks=None, w_max=w_max_box, gh_order=gh_order)
        model.note = "not quasi-regular; lambda unknown"
        return model
    elif name == "example3":
        bs = BlockStructure((2, 2, 2, 2))
        _check_blocks(name, blocks, bs)
        model = AdditiveRegressionModel(
            "example3", 8, (_example3_x_part, _example3_y_part), _example3_mean,
            blocks=bs, w_max=w_max_box, gh_order=gh_order,
        )
    else:
        raise InvalidArgumentError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")

    model.known_lambda = model.known_nu = model.blocks.g / 2
    return model


_SPEC_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\(\s*\(?([0-9,\s]*)\)?\s*\))?\s*$")


def parse_model_spec(text: str, **kwargs) -> ModelInstance:
    """Build a model from a compact string such as ``canonical(1,2)`` or ``regular(2)``."""
    m = _SPEC_RE.match(text)
    if not m:
        raise InvalidArgumentError(f"cannot parse model spec {text!r}")
    name, args = m.group(1), m.group(2)
    ints = [int(a) for a in args.split(",") if a.strip()] if args else []
    if name == "regular":
        if len(ints) != 1:
            raise InvalidArgumentError("regular(d) takes one integer")
        return make_model(name, d=ints[0], **kwargs)
    if ints:
        return make_model(name, blocks=ints, **kwargs)
    return make_model(name, **kwargs)


def sample_true(model: ModelInstance, n: int, seed) -> Dataset:
    """``n`` i.i.d. draws from the true distribution; a pure function of the seed."""
    if int(n) < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = _rng.generator(seed)
    return Dataset(model.sample_x(rng, int(n)), seed=seed)


class SandwichResult(NamedTuple):
    c1_hat: float
    c2_hat: float
    holds: bool


def check_sandwich(
    model: ModelInstance,
    trials: int = 10_000,
    seed=0,
    blocks: BlockStructure | None = None,
    probe_fraction: float = 0.5,
    probe_decades: float = 4.0,
    ratio_floor: float = 1e-3,
) -> SandwichResult:
    """Empirical bounds on ``K(w) / ||u(w)||^2`` over the parameter box.

    A ``probe_fraction`` of the trials draws each coordinate with log-uniform
    magnitude over ``probe_decades`` decades below ``w_max`` so that regions
    near coordinate hyperplanes are visited. Points with ``||u|| = 0`` are
    skipped. The bound is declared to hold when both extremes are finite and
    positive and their ratio exceeds ``ratio_floor``; a sampled ratio collapsing
    toward zero is the empirical signature of a missing lower constant.
    """
    bs = blocks if blocks is not None else model.blocks
    if bs is None:
        raise UnsupportedModelError(f"{model.name} has no block structure")
    if not isinstance(bs, BlockStructure):
        bs = BlockStructure(tuple(bs))
    if bs.d != model.d:
        raise InvalidArgumentError(f"blocks cover {bs.d} coordinates, model has {model.d}")

    rng = _rng.generator(seed)
    n_probe = int(round(trials * probe_fraction))
    w = rng.uniform(-model.w_max, model.w_max, (trials - n_probe, model.d))
    mag = model.w_max * 10.0 ** (-probe_decades * rng.random((n_probe, model.d)))
    sign = np.where(rng.random((n_probe, model.d)) < 0.5, -1.0, 1.0)
    w = np.concatenate([w, sign * mag])

    u2 = np.sum(u_map(w, bs) ** 2, axis=-1)
    keep = u2 > 0
    ratio = model.kl(w[keep]) / u2[keep]
    if ratio.size == 0:
        return SandwichResult(float("nan"), float("nan"), False)
    c1, c2 = float(ratio.min()), float(ratio.max())
    ok = bool(np.isfinite(c1) and np.isfinite(c2) and c1 > 0 and c2 > 0 and c1 / c2 > ratio_floor)
    return SandwichResult(c1, c2, ok)


def model_table() -> list[dict]:
    """Summary rows for the built-in zoo at representative sizes."""
    rows = []
    for spec in ("canonical(1,2)", "example1", "example2", "example3", "regular(2)", "conjugate1d"):
        m = parse_model_spec(spec)
        rows.append(
            dict(name=m.name, d=m.d, g=m.g, known_lambda=m.known_lambda, known_nu=m.known_nu, note=m.note)
        )
    return rows
