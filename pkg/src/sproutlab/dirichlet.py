"""Gamma/Dirichlet sampling with implicit-reparameterization gradients.

A Dirichlet draw is ``z = G / sum(G)`` with independent ``G_k ~ Gamma(c_k, 1)``.
The gradient of a draw with respect to its concentration comes from holding the
Gamma CDF value fixed: ``dG/dc = -(dF/dc) / pdf(G)``. The draws are memoized
with the sample so the backward pass differentiates the exact realization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .errors import NumericError

LOG_BETA_BOUND = 30.0
CONCENTRATION_FLOOR = 1e-6
GAMMA_FLOOR = 1e-300


@dataclass(frozen=True)
class DirichletParams:
    """Global concentration vector, stored as log(beta) so beta stays positive."""

    log_beta: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.log_beta, dtype=np.float64)
        if lb.ndim != 1 or lb.size < 2:
            raise ValueError(f"log_beta must be a K-vector with K >= 2, got shape {lb.shape}")
        if not np.all(np.isfinite(lb)):
            raise NumericError("log_beta has non-finite entries")
        object.__setattr__(self, "log_beta", np.clip(lb, -LOG_BETA_BOUND, LOG_BETA_BOUND))

    @classmethod
    def from_beta(cls, beta) -> "DirichletParams":
        beta = np.asarray(beta, dtype=np.float64)
        if np.any(beta <= 0):
            raise ValueError("beta must be strictly positive")
        return cls(np.log(beta))

    @classmethod
    def random(cls, num_classes: int, rng: np.random.Generator, scale: float = 0.1):
        return cls(rng.normal(0.0, scale, size=num_classes))

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)

    @property
    def num_classes(self) -> int:
        return self.log_beta.size


def sample_gamma(alpha, rng: np.random.Generator):
    """Gamma(alpha, 1) draws, one per entry of ``alpha``.

    Marsaglia-Tsang squeeze/rejection for alpha >= 1; for alpha < 1 the draw
    is boosted, G(a) = G(a + 1) * U**(1/a), evaluated in log space. Outputs are
    clamped below at 1e-300.
    """
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(~(a > 0)):
        raise ValueError("sample_gamma: shape parameter must be > 0")
    flat = a.reshape(-1)
    small = flat < 1.0
    boosted = np.where(small, flat + 1.0, flat)
    d = boosted - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(flat)
    todo = np.arange(flat.size)
    while todo.size:
        x = rng.standard_normal(todo.size)
        u = rng.random(todo.size)
        v = (1.0 + c[todo] * x) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            accept = (v > 0) & (
                (u < 1.0 - 0.0331 * x**4)
                | (np.log(u) < 0.5 * x * x + d[todo] * (1.0 - v + np.log(v)))
            )
        out[todo[accept]] = d[todo[accept]] * v[accept]
        todo = todo[~accept]
    if np.any(small):
        idx = np.flatnonzero(small)
        u = rng.random(idx.size)
        out[idx] = np.exp(np.log(out[idx]) + np.log(u) / flat[idx])
    out = np.maximum(out, GAMMA_FLOOR)
    return out.reshape(a.shape) if a.ndim else float(out[0])


@dataclass(frozen=True)
class DirichletSample:
    z: np.ndarray  # (..., K) points on the simplex
    gammas: np.ndarray  # the Gamma draws that produced z
    concentration: np.ndarray


def sample_dirichlet(params, rng: np.random.Generator, n: int | None = None) -> DirichletSample:
    """Draw from Dirichlet(beta); ``params`` is DirichletParams or a concentration array.

    A concentration array of shape (..., K) yields one draw per row; ``n``
    repeats a single K-vector ``n`` times.
    """
    conc = params.beta if isinstance(params, DirichletParams) else np.asarray(params, np.float64)
    if n is not None:
        conc = np.broadcast_to(conc, (n, conc.shape[-1]))
    conc = np.maximum(conc, CONCENTRATION_FLOOR)
    g = sample_gamma(conc, rng)
    z = g / g.sum(axis=-1, keepdims=True)
    return DirichletSample(z, g, np.array(conc))


def moments(params) -> tuple[np.ndarray, np.ndarray]:
    """Mean beta/beta0 and covariance of Dirichlet(beta)."""
    beta = params.beta if isinstance(params, DirichletParams) else np.asarray(params, np.float64)
    b0 = beta.sum()
    mean = beta / b0
    cov = -np.outer(beta, beta) / (b0**2 * (b0 + 1.0))
    np.fill_diagonal(cov, beta * (b0 - beta) / (b0**2 * (b0 + 1.0)))
    return mean, cov


def correlation_matrix(params) -> np.ndarray:
    beta = params.beta if isinstance(params, DirichletParams) else np.asarray(params, np.float64)
    return np.outer(beta, beta)


def _shape_cdf_derivative(alpha, g):
    """d/d(alpha) of the regularized lower incomplete gamma P(alpha, g), central differences."""
    h = np.minimum(1e-4 * np.maximum(1.0, alpha), 0.5 * alpha)
    # in the upper tail differentiate Q = 1 - P to keep relative precision
    alpha, g, h = np.broadcast_arrays(alpha, g, h)
    upper = g > alpha
    out = np.empty(g.shape)
    a, x, hh = alpha[upper], g[upper], h[upper]
    out[upper] = (special.gammaincc(a - hh, x) - special.gammaincc(a + hh, x)) / (2.0 * hh)
    a, x, hh = alpha[~upper], g[~upper], h[~upper]
    out[~upper] = (special.gammainc(a + hh, x) - special.gammainc(a - hh, x)) / (2.0 * hh)
    return out


def gamma_shape_grad(alpha, g) -> np.ndarray:
    """Implicit derivative dG/d(alpha) of a Gamma(alpha, 1) draw G."""
    alpha = np.asarray(alpha, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    dcdf = _shape_cdf_derivative(alpha, g)
    log_pdf = (alpha - 1.0) * np.log(g) - g - special.gammaln(alpha)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        grad = -dcdf * np.exp(-log_pdf)
    bad = ~np.isfinite(grad)
    if np.any(bad):
        k = np.argwhere(bad)[0]
        raise NumericError(f"non-finite Gamma shape gradient at index {tuple(k)} "
                           f"(alpha={alpha[tuple(k)]:.3g}, G={g[tuple(k)]:.3g})")
    return grad


def pathwise_grad(params, gamma_draws) -> np.ndarray:
    """Jacobian dz/dbeta of the draw z = G/sum(G) that ``gamma_draws`` produced.

    Accepts a single K-vector of draws (returns K x K, entry [i, k] = dz_i/dbeta_k)
    or a stack (..., K) (returns (..., K, K)).
    """
    beta = params.beta if isinstance(params, DirichletParams) else np.asarray(params, np.float64)
    g = np.asarray(gamma_draws, dtype=np.float64)
    dg = gamma_shape_grad(np.broadcast_to(beta, g.shape), g)
    s = g.sum(axis=-1, keepdims=True)
    k = g.shape[-1]
    dz_dg = (np.eye(k) * s[..., None] - g[..., :, None]) / (s[..., None] ** 2)
    return dz_dg * dg[..., None, :]


# -------------------------------------------------- recorded Dirichlet draw


def _dirichlet_fwd(conc, gammas):
    s = gammas.sum(axis=-1, keepdims=True)
    z = gammas / s
    return z, (conc, gammas, z, s)


def _dirichlet_bwd(up, saved, needs, gammas):
    conc, g, z, s = saved
    dl_dg = (up - (up * z).sum(axis=-1, keepdims=True)) / s
    return (dl_dg * gamma_shape_grad(conc, g),)


ad.register_primitive("dirichlet_sample", _dirichlet_fwd, _dirichlet_bwd)


def reparam_dirichlet(concentration, rng: np.random.Generator,
                      floor: float = CONCENTRATION_FLOOR) -> ad.Tensor:
    """Row-wise Dirichlet draws differentiable w.r.t. ``concentration``.

    Concentrations are clamped below at ``floor`` first (zero gradient where
    clamped). The Gamma draws are stored on the tape node.
    """
    conc = ad.clip(concentration, lo=floor)
    gammas = sample_gamma(conc.data, rng)
    return ad.apply_primitive("dirichlet_sample", conc, gammas=gammas)
