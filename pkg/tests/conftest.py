from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kdselect.data import LabeledSeries


@pytest.fixture
def spike_series() -> LabeledSeries:
    rng = np.random.default_rng(7)
    values = rng.normal(0.0, 0.3, size=200)
    labels = np.zeros(200, dtype=np.int8)
    for pos in (50, 140):
        values[pos] += 6.0
        labels[pos] = 1
    return LabeledSeries(id="spiky", values=values, point_labels=labels,
                         dataset_name="unit", domain_text="synthetic spikes")


@pytest.fixture
def periodic_series() -> LabeledSeries:
    rng = np.random.default_rng(11)
    t = np.arange(240, dtype=np.float64)
    values = np.sin(2 * np.pi * t / 16) + rng.normal(0.0, 0.05, size=240)
    labels = np.zeros(240, dtype=np.int8)
    values[120:136] = np.linspace(values[119], values[136 % 240], 16)  # flattened motif
    labels[120:136] = 1
    return LabeledSeries(id="periodic", values=values, point_labels=labels,
                         dataset_name="unit", domain_text="synthetic motif break")
