# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import bitdiff


def test_codec_roundtrip():
    bits = bitdiff.encode([5, 0, 7], 8)
    assert bits.tolist() == [1, 0, 1, 0, 0, 0, 1, 1, 1]
    ids, invalid = bitdiff.decode(bits, 8)
    assert ids == [5, 0, 7]
    assert invalid == 0
    assert bitdiff.decode(np.ones(15), 30522) == ([0], 1)
    assert bitdiff.bits_per_token(30522) == 15


def test_matched_filter_and_grid():
    assert bitdiff.matched_filter_logit(1.0, 0.5) == pytest.approx(2.0)
    grid = bitdiff.karras_grid(1)
    assert grid.tolist() == [80.0, 0.002]


def test_exact_oracle_tweedie():
    dist = bitdiff.ToyDistribution.iid_uniform(4, 2)
    x = np.array([0.3, 1.1, -0.2, 0.6])
    d = bitdiff.exact_denoiser(x, 0.4, dist)
    s = bitdiff.exact_score(x, 0.4, dist)
    np.testing.assert_allclose(s, (d - x) / 0.16, atol=1e-10)


def test_oracle_sampling_matches_marginal():
    dist = bitdiff.ToyDistribution.cyclic_markov(8, 4, 0.9)
    samples = bitdiff.oracle_sample(dist, 2000, nfe=64, seed=3)
    assert len(samples) == 2000
    assert bitdiff.unigram_tv(samples, dist) < 0.05
    assert dist.entropy() / 4 == pytest.approx(0.91, abs=0.01)


def test_logit_counts_and_cli():
    c = bitdiff.logit_counts(512, 128, 30522)
    assert c["reduction"] == 2035
    code, out, _ = bitdiff.run(["grid", "--type", "karras", "--nfe", "1"])
    assert code == 0
    assert out.split() == ["80", "0.002"]
    code, _, _ = bitdiff.run(["no-such-command"])
    assert code == 1


def test_errors_are_python_exceptions():
    with pytest.raises(ValueError):
        bitdiff.encode([9], 8)
    with pytest.raises(ValueError):
        bitdiff.bits_per_token(1)
    assert not math.isnan(bitdiff.matched_filter_logit(0.5, 1.0))
