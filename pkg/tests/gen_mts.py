"""Synthetic multivariate time-series suites for training tests.

Three task families:
- separable_suite: trivially separable two-class data (level offsets).
- frequency_suite: classes carry distinct per-channel oscillation rates, so a
  short prefix suffices once the model can read temporal/spectral structure.
- amplitude_suite: the two classes are exact global rescalings of one shared
  signal distribution; only amplitude separates them, the pathological case
  for normalize-everything pipelines on narrow inputs.
"""

import numpy as np

from earlyflow.features import MtsSample


def _wrap(values, label, i):
    ts = np.arange(values.shape[0], dtype=np.float64)
    return MtsSample(flow_id=f"{label}-{i:04d}", values=values,
                     timestamps=ts, label=label)


def separable_suite(seed, n=80, length=12, d=4):
    rng = np.random.default_rng([seed, 11])
    samples = []
    for i in range(n):
        cls = i % 2
        base = 1.0 if cls == 0 else -1.0
        values = base + 0.2 * rng.normal(size=(length, d))
        samples.append(_wrap(values, f"class{cls}", i))
    return samples


def frequency_suite(seed, n=600, length=64, d=13, n_classes=3, noise=0.3):
    """Class c puts sinusoids with class-specific rates on a few channels;
    remaining channels are pure noise."""
    rng = np.random.default_rng([seed, 22])
    cycles = {0: (2.0, 4.0), 1: (8.0, 12.0), 2: (18.0, 24.0)}
    t = np.arange(length)
    samples = []
    for i in range(n):
        cls = i % n_classes
        f1, f2 = cycles[cls]
        values = noise * rng.normal(size=(length, d))
        for ch, f in ((0, f1), (1, f2), (2, f1), (3, f2), (4, f1), (5, f2)):
            phase = rng.uniform(0, 2 * np.pi)
            values[:, ch] += np.sin(2 * np.pi * f * t / length + phase)
        samples.append(_wrap(values, f"class{cls}", i))
    return samples


def amplitude_suite(seed, n=400, length=32, d=2, amps=(1.0, 1.6), noise=0.3):
    """Classes are exact global rescalings: sample = amp * (waves + noise),
    with the wave pool shared across classes."""
    rng = np.random.default_rng([seed, 33])
    t = np.arange(length)
    samples = []
    for i in range(n):
        cls = i % 2
        values = np.zeros((length, d))
        for ch in range(d):
            f = rng.uniform(2.0, 6.0)
            phase = rng.uniform(0, 2 * np.pi)
            values[:, ch] = np.sin(2 * np.pi * f * t / length + phase)
        values = amps[cls] * (values + noise * rng.normal(size=(length, d)))
        samples.append(_wrap(values, f"class{cls}", i))
    return samples
