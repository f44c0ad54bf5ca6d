"""Seeded data generators shared by several test modules."""

import numpy as np

from fieldcal.data import SynthConfig, synthesize


def calibrated_logits(n, seed, scale=1.2, shift=0.0):
    """Logits ``l ~ N(0, scale)`` with ``y ~ Bernoulli(sigmoid(l))``; returns ``(l + shift, y)``."""
    g = np.random.default_rng(seed)
    l = g.normal(0.0, scale, n)
    y = (g.random(n) < 1.0 / (1.0 + np.exp(-l))).astype(np.int64)
    return l + shift, y


def small_dataset(n=400, seed=0, rates=(0.2, 0.7), cards=(4, 6), n_num=2):
    return synthesize(SynthConfig(n, rates, cat_cardinalities=cards, n_numerical=n_num), seed)
