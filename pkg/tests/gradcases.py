"""Random finite-difference cases shared by the unit and acceptance suites.

Each case is (name, f, x): ``f`` maps a Tensor to a recorded-or-plain scalar
Tensor so that ``finite_diff_check(f, x)`` applies directly.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from sproutlab import autodiff as ad
from sproutlab.attacks import cw_margin_loss, per_example_ce
from sproutlab.models import ModelSpec, build_model, forward
from sproutlab.vicinity import gce_loss


def _weighted(y, w):
    # sum(w * y): exercises the full Jacobian, not only its column sums
    return ad.reduce_sum(ad.multiply(y, w))


def primitive_cases(rng: np.random.Generator):
    n = rng.normal
    shape = (3, 4)
    w = n(size=shape)
    c = n(size=shape)
    cases = [
        ("add", lambda x: _weighted(ad.add(x, c), w), n(size=shape)),
        ("add-broadcast", lambda x: _weighted(ad.add(c, x), w), n(size=(4,))),
        ("subtract", lambda x: _weighted(ad.subtract(c, x), w), n(size=shape)),
        ("multiply", lambda x: _weighted(ad.multiply(x, x), w), n(size=shape)),
        ("scalar_multiply", lambda x: _weighted(ad.scalar_multiply(x, 2.5), w), n(size=shape)),
        ("matmul-left", lambda x: _weighted(ad.matmul(x, c.T), w[:, :3]), n(size=shape)),
        ("matmul-right", lambda x: _weighted(ad.matmul(c, x), w[:, :2]), n(size=(4, 2))),
        ("relu", lambda x: _weighted(ad.relu(x), w), n(size=shape)),
        ("log", lambda x: _weighted(ad.log(x), w), rng.uniform(0.5, 2.0, shape)),
        ("exp", lambda x: _weighted(ad.exp(x), w), n(size=shape)),
        ("softmax", lambda x: _weighted(ad.softmax(x), w), n(size=shape)),
        ("log_softmax", lambda x: _weighted(ad.log_softmax(x), w), n(size=shape)),
        ("sum-axis", lambda x: _weighted(ad.reduce_sum(x, axis=0), w[0]), n(size=shape)),
        ("mean-axis", lambda x: _weighted(ad.reduce_mean(x, axis=1, keepdims=True), w[:, :1]), n(size=shape)),
        ("clip", lambda x: _weighted(ad.clip(x, -0.5, 0.5), w), n(size=shape)),
        ("index_gather", lambda x: _weighted(ad.gather(x, rng_idx), w[:, 0]), n(size=shape)),
        ("reshape", lambda x: _weighted(ad.reshape(x, (4, 3)), w.reshape(4, 3)), n(size=shape)),
    ]
    rng_idx = rng.integers(0, 4, size=3)
    img, ker = n(size=(2, 2, 5, 5)), n(size=(3, 2, 3, 3))
    wout = n(size=(2, 3, 5, 5))
    cases += [
        ("conv2d-x", lambda x: _weighted(ad.conv2d(x, ker, pad=1), wout), img),
        ("conv2d-w", lambda k: _weighted(ad.conv2d(img, k, pad=1), wout), ker),
        ("conv2d-nopad", lambda x: _weighted(ad.conv2d(x, ker), wout[:, :, :3, :3]), img),
    ]
    return cases


def composite_cases(rng: np.random.Generator):
    """gce_loss through the CNN, attack losses w.r.t. input, and the beta path."""
    spec = ModelSpec("cnn", (1, 8, 8), 4, 1, pool=4)
    params = build_model(spec, int(rng.integers(1000)))
    x = rng.uniform(0.05, 0.95, size=(3, 1, 8, 8))
    labels = rng.integers(0, 4, size=3)
    soft = rng.dirichlet(np.ones(4), size=3)
    cases = []
    for name in ("conv1.weight", "conv2.bias", "dense.weight"):
        def f(p, name=name):
            ps = dict(params)
            ps[name] = p
            return gce_loss(forward(spec, ps, x), soft)
        cases.append((f"gce-cnn-{name}", f, params[name]))
    cases.append(("ce-attack-input",
                  lambda xi: ad.reduce_sum(per_example_ce(forward(spec, params, xi), labels)), x))
    cases.append(("cw-attack-input",
                  lambda xi: cw_margin_loss(forward(spec, params, xi), labels, kappa=50.0), x))
    cases.append(beta_path_case(rng))
    return cases


def beta_path_case(rng: np.random.Generator, k: int = 4, alpha: float = 0.3):
    """gce_loss of a Dirichlet-smoothed label w.r.t. log beta.

    Gamma draws are produced by inverse-CDF sampling at fixed uniforms, so the
    plain (unrecorded) evaluation used by the finite differences is the exact
    function whose pathwise derivative the recorded pass computes.
    """
    u = rng.uniform(0.2, 0.95, size=(3, k))
    y = np.eye(k)[rng.integers(0, k, size=3)]
    logits = rng.normal(size=(3, k))

    def f(log_beta):
        conc = ad.add(y * (1.0 - alpha), ad.scalar_multiply(ad.exp(log_beta), alpha))
        gammas = special.gammaincinv(conc.data, u)
        z = ad.apply_primitive("dirichlet_sample", conc, gammas=gammas)
        return gce_loss(logits, z)

    return ("beta-pathwise", f, rng.normal(0.0, 0.3, size=k))
