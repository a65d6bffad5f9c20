# SPDX-License-Identifier: Apache-2.0
"""Bitstream diffusion on analog bits."""

from ._bitdiff import (
    ArgumentError,
    CapacityError,
    ConfigError,
    NumericError,
    ShapeError,
    ToyDistribution,
    bits_per_token,
    decode,
    encode,
    exact_denoiser,
    exact_score,
    karras_grid,
    logit_counts,
    matched_filter_logit,
    oracle_sample,
    run,
    unigram_tv,
)

__all__ = [
    "ArgumentError",
    "CapacityError",
    "ConfigError",
    "NumericError",
    "ShapeError",
    "ToyDistribution",
    "bits_per_token",
    "decode",
    "encode",
    "exact_denoiser",
    "exact_score",
    "karras_grid",
    "logit_counts",
    "matched_filter_logit",
    "oracle_sample",
    "run",
    "unigram_tv",
]
