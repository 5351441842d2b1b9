"""Minimal Metropolis-Hastings building blocks.

The calibration sampler has its own block loop (it caches emulator state
between blocks), but shares the accept/reject rule defined here; the generic
random-walk driver below is also what correctness tests target directly.
"""

from __future__ import annotations

import numpy as np

__all__ = ["metropolis_accept", "random_walk_mh"]


def metropolis_accept(rng: np.random.Generator, log_ratio: float) -> bool:
    """Accept with probability min(1, exp(log_ratio)).

    Always consumes exactly one uniform draw so chains stay reproducible
    regardless of the ratio's value.
    """
    u = rng.uniform()
    if log_ratio >= 0:
        return True
    return np.log(u) < log_ratio


def random_walk_mh(log_target, x0: float, step: float, n_iter: int, seed: int,
                   proposal=None):
    """Scalar Metropolis-Hastings chain with a symmetric proposal.

    Parameters
    ----------
    log_target : callable
        Log density up to a constant; may return -inf.
    proposal : callable, optional
        ``proposal(rng, x) -> x'``; must be symmetric. Default is a Gaussian
        step of scale ``step``.

    Returns
    -------
    samples : array, shape (n_iter,)
    accepted : bool array, shape (n_iter,)
    """
    rng = np.random.default_rng(seed)
    if proposal is None:
        def proposal(r, x):
            return x + step * r.normal()
    x = float(x0)
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise ValueError("initial state has non-finite log target")
    samples = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=bool)
    for i in range(n_iter):
        x_new = proposal(rng, x)
        lp_new = float(log_target(x_new))
        if metropolis_accept(rng, lp_new - lp):
            x, lp = x_new, lp_new
            accepted[i] = True
        samples[i] = x
    return samples, accepted
