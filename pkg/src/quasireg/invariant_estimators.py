"""Three routes to the learning coefficient and singular fluctuation.

* ``rlct_symbolic``: exact rationals from the block partition.
* ``solve_lambda_nu_two_beta``: linear solve on replicate averages of
  ``E_w[K_n]`` taken at two inverse temperatures.
* ``laplace_fit``: regression of ``log Z(t)`` for the Laplace integral
  ``Z(t) = ∫ exp(-t K(w)) prior(w) dw ≈ C t^-lambda (log t)^(m-1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _rng
from .exceptions import (
    ConditioningError,
    InvalidArgumentError,
    NumericalUnderflowError,
)
from .model_zoo import BlockStructure, ModelInstance

METHODS = ("symbolic", "two_beta", "laplace_fit", "v_n_average")

DEFAULT_T_GRID = tuple(np.logspace(2, 5, 12))


@dataclass
class InvariantEstimate:
    lambda_hat: float | Fraction | None
    nu_hat: float | Fraction | None = None
    m_hat: float | int | None = None
    method: str = "symbolic"
    se: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}")


def rlct_symbolic(blocks: BlockStructure) -> InvariantEstimate:
    """Learning coefficient and multiplicity of a block-product model.

    Each block's zeta function has its largest pole at ``-1/2`` with order equal
    to the block size. Blocks share no coordinates, so thresholds add and the
    orders combine as ``sum(order) - (g - 1)``.
    """
    if not isinstance(blocks, BlockStructure):
        blocks = BlockStructure(tuple(blocks))
    parts = [Fraction(1, 2)] * blocks.g
    lam = sum(parts, Fraction(0))
    m = sum(blocks.block_sizes) - (blocks.g - 1)
    return InvariantEstimate(
        lambda_hat=lam,
        nu_hat=lam,
        m_hat=m,
        method="symbolic",
        details={"block_lambdas": parts, "block_orders": list(blocks.block_sizes)},
    )


def format_symbolic(est: InvariantEstimate) -> str:
    """``lambda = 1 (= 1/2 + 1/2), m = 2``; the per-block sum is shown only
    when some block has more than one coordinate."""
    text = f"lambda = {est.lambda_hat}"
    if any(o > 1 for o in est.details.get("block_orders", ())):
        text += " (= " + " + ".join(str(p) for p in est.details["block_lambdas"]) + ")"
    return f"{text}, m = {est.m_hat}"


def estimate_nu_from_v(v_bar: float, beta: float, se: float | None = None) -> InvariantEstimate:
    """Singular fluctuation from an average functional variance."""
    if v_bar < 0 or beta <= 0:
        raise InvalidArgumentError("need v_bar >= 0 and beta > 0")
    nu = beta * v_bar / 2
    return InvariantEstimate(
        lambda_hat=None,
        nu_hat=nu,
        method="v_n_average",
        se={} if se is None else {"nu": beta * se / 2},
    )


def solve_lambda_nu_two_beta(
    ewkn_1: float,
    beta_1: float,
    ewkn_2: float,
    beta_2: float,
    n: int,
    se_1: float | None = None,
    se_2: float | None = None,
    cov_12: float = 0.0,
) -> InvariantEstimate:
    """Solve ``n * ewkn_k = lambda / beta_k - nu`` for ``(lambda, nu)``.

    ``cov_12`` is the covariance of the two averages, non-zero when both
    temperatures reuse the same training sets.
    """
    if beta_1 == beta_2:
        raise np.linalg.LinAlgError("two distinct inverse temperatures are required")
    A = np.array([[1.0 / beta_1, -1.0], [1.0 / beta_2, -1.0]])
    lam, nu = np.linalg.solve(A, n * np.array([ewkn_1, ewkn_2]))
    se = {}
    if se_1 is not None and se_2 is not None:
        J = np.linalg.inv(A) * n
        cov = np.array([[se_1**2, cov_12], [cov_12, se_2**2]])
        out = J @ cov @ J.T
        se = {"lambda": float(np.sqrt(out[0, 0])), "nu": float(np.sqrt(out[1, 1]))}
    return InvariantEstimate(float(lam), float(nu), None, "two_beta", se)


def _proposal(rng, size, d, w_max, defensive, power):
    """Per-coordinate mixture of uniform and ``|w|^(power-1)`` on the box.

    The uniform share keeps ``prior / proposal`` bounded; the power-law share
    puts most points close to the coordinate hyperplanes where ``K`` vanishes.
    Component labels are stratified so each coordinate sees exactly
    ``round(defensive * size)`` uniform points.
    """
    n_uni = int(round(defensive * size))
    labels = np.zeros((size, d), dtype=bool)
    labels[:n_uni] = True
    labels = rng.permuted(labels, axis=0)
    mag = np.where(labels, rng.random((size, d)), rng.random((size, d)) ** (1.0 / power))
    sign = np.where(rng.random((size, d)) < 0.5, -1.0, 1.0)
    w = w_max * sign * mag
    r = np.abs(w) / w_max
    with np.errstate(divide="ignore"):
        dens = defensive + (1.0 - defensive) * power * r ** (power - 1.0)
    log_h = np.sum(np.log(dens / (2.0 * w_max)), axis=-1)
    return w, log_h


def laplace_integral(model: ModelInstance, t: float, n_samples: int, seed, defensive=0.3, power=0.25):
    """Importance-sampled estimate of ``Z(t)`` with its standard error."""
    rng = _rng.generator(seed)
    w, log_h = _proposal(rng, n_samples, model.d, model.w_max, defensive, power)
    log_w = model.prior_log_density(w) - log_h - t * model.kl(w)
    shift = np.max(log_w)
    if not np.isfinite(shift):
        return 0.0, 0.0
    vals = np.exp(log_w - shift)
    z = float(vals.mean()) * math.exp(shift)
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) * math.exp(shift)
    return z, se


def laplace_fit(
    model: ModelInstance,
    t_grid=DEFAULT_T_GRID,
    mc_per_t: int = 100_000,
    seed=0,
    min_decades: float = 3.0,
    max_condition: float = 1e4,
) -> InvariantEstimate:
    """Estimate ``lambda`` and ``m`` from the large-``t`` decay of ``Z(t)``.

    Fits ``log Z = c0 - lambda log t + (m - 1) log log t`` by weighted least
    squares, with weights from the Monte Carlo error of each ``Z(t)``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 4 or np.any(np.diff(t) <= 0) or t[0] <= math.e:
        raise InvalidArgumentError("t_grid must be ascending, > e, with at least 4 points")
    if mc_per_t < 1000:
        raise InvalidArgumentError("mc_per_t too small")
    X = np.column_stack([np.log(t), np.log(np.log(t)), np.ones_like(t)])
    span = math.log10(t[-1] / t[0])
    cond = float(np.linalg.cond(X))
    if span < min_decades or cond > max_condition:
        raise ConditioningError(
            f"grid spans {span:.2f} decades (need {min_decades}); design condition {cond:.3g}"
        )

    z = np.empty(t.size)
    z_se = np.empty(t.size)
    for i, ti in enumerate(t):
        z[i], z_se[i] = laplace_integral(model, ti, mc_per_t, _rng.child(seed, i))
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise NumericalUnderflowError("non-positive Z(t) estimate; raise mc_per_t")

    y = np.log(z)
    y_se = np.maximum(z_se / z, 1e-12)
    wts = 1.0 / y_se**2
    XtW = X.T * wts
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ y)
    resid = y - X @ coef
    # inflate by the residual scatter when the model misfits beyond MC noise
    dof = t.size - 3
    chi2 = float(np.sum(wts * resid**2) / dof) if dof > 0 else 1.0
    cov = cov * max(chi2, 1.0)
    return InvariantEstimate(
        lambda_hat=float(-coef[0]),
        m_hat=float(1.0 + coef[1]),
        method="laplace_fit",
        se={"lambda": float(np.sqrt(cov[0, 0])), "m": float(np.sqrt(cov[1, 1]))},
        details={"t": t.tolist(), "z": z.tolist(), "z_se": z_se.tolist(), "reduced_chi2": chi2},
    )
