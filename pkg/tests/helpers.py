"""Independent simulation oracles shared by unit and acceptance tests."""

import math

import numpy as np


def simulate_similarities(spec, k, d, trials, seed, chunk=4000):
    """Draw fresh i.i.d. (members, outsider) sets and return s_in, s_out, s_diff.

    Centroid is the plain mean of the k members; s_in uses the first member.
    """
    rng = seed.generator()
    s_in = np.empty(trials)
    s_out = np.empty(trials)
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        block = spec.sample(rng, (stop - start, k + 1, d))
        c = block[:, :k].mean(axis=1)
        s_in[start:stop] = np.einsum("td,td->t", block[:, 0], c)
        s_out[start:stop] = np.einsum("td,td->t", block[:, k], c)
    return s_in, s_out, s_in - s_out


def mean_var_z(sample, approx):
    """z-scores of the sample mean and variance against a NormalApprox."""
    n = sample.size
    mean = sample.mean()
    dev = sample - mean
    var = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt(max(m4 - var * var, 0.0) / n)
    return (mean - approx.mean) / se_mean, (var - approx.variance) / se_var
