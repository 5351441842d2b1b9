import numpy as np
import pytest
from scipy.stats import kstest, norm

from emucal.mcmc import metropolis_accept, random_walk_mh


def test_always_accepts_uphill():
    rng = np.random.default_rng(0)
    assert all(metropolis_accept(rng, lr) for lr in (0.0, 0.5, 10.0))


def test_accept_probability_matches_ratio():
    rng = np.random.default_rng(1)
    log_ratio = np.log(0.3)
    hits = sum(metropolis_accept(rng, log_ratio) for _ in range(200000))
    assert hits / 200000 == pytest.approx(0.3, abs=0.01)


def test_gaussian_target_passes_ks():
    """Draws from a standard-normal target pass Kolmogorov-Smirnov at the 1%
    level. KS assumes independent samples, so the (autocorrelated) chain is
    thinned at a fixed stride before testing."""
    samples, accepted = random_walk_mh(norm.logpdf, x0=0.0, step=2.4,
                                       n_iter=100000, seed=42)
    assert 0.2 < accepted.mean() < 0.6
    thinned = samples[::20]
    result = kstest(thinned, "norm")
    assert result.pvalue > 0.01, f"KS p={result.pvalue:.4f}"


def test_two_point_proposal_on_bounded_uniform():
    # symmetric +/- delta proposal, uniform target on [0, 1]: every in-bounds
    # proposal is accepted
    def log_uniform(x):
        return 0.0 if 0.0 <= x <= 1.0 else -np.inf

    delta = 0.07
    trace = {"proposals": []}

    def proposal(rng, x):
        step = delta if rng.uniform() < 0.5 else -delta
        trace["proposals"].append(x + step)
        return x + step

    samples, accepted = random_walk_mh(log_uniform, x0=0.5, step=0.0,
                                       n_iter=5000, seed=7, proposal=proposal)
    proposals = np.array(trace["proposals"])
    in_bounds = (proposals >= 0.0) & (proposals <= 1.0)
    assert accepted[in_bounds].all()
    assert not accepted[~in_bounds].any()
    assert in_bounds.sum() > 0 and (~in_bounds).sum() > 0  # both cases hit


def test_detailed_balance_smoke():
    # long chain on N(2, 0.5^2): quantiles of the empirical law match
    target = lambda x: norm.logpdf(x, loc=2.0, scale=0.5)
    samples, _ = random_walk_mh(target, x0=2.0, step=1.2, n_iter=100000, seed=3)
    thinned = samples[5000::10]
    result = kstest(thinned, lambda x: norm.cdf(x, loc=2.0, scale=0.5))
    assert result.pvalue > 0.01

def test_nonfinite_start_rejected():
    with pytest.raises(ValueError):
        random_walk_mh(lambda x: -np.inf, x0=0.0, step=1.0, n_iter=10, seed=0)
