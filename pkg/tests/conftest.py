from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from rfpnapo.numerics import MlpSpec, mlp_init
from rfpnapo.prefdata import PreferenceRecord
from rfpnapo.rectflow import default_mixture, one_hot
from rfpnapo.training import run_pretrain

FIXTURES = Path(__file__).parent / "fixtures"


def make_record(rng: np.random.Generator, spec: MlpSpec, delta_r: float = 0.5) -> PreferenceRecord:
    d = spec.data_dim
    return PreferenceRecord(
        cond=one_hot(int(rng.integers(spec.cond_dim)), spec.cond_dim),
        x0w=rng.standard_normal(d),
        x0l=rng.standard_normal(d),
        xTw=rng.standard_normal(d),
        xTl=rng.standard_normal(d),
        delta_r=delta_r,
    )


@pytest.fixture(scope="session")
def small_spec() -> MlpSpec:
    return MlpSpec(data_dim=2, cond_dim=3, hidden=(8, 6))


@pytest.fixture(scope="session")
def small_params(small_spec) -> np.ndarray:
    return mlp_init(small_spec, 7)


@pytest.fixture(scope="session")
def trained_pair():
    """(ref, later, spec): two distinct snapshots of one short training run."""
    spec = MlpSpec(data_dim=2, cond_dim=4, hidden=(16, 16))
    mixture = default_mixture(2, 4)
    ref, _ = run_pretrain(spec, mixture, steps=200, batch=32, lr=3e-3, seed=19)
    later, _ = run_pretrain(spec, mixture, steps=320, batch=32, lr=3e-3, seed=19)
    return ref, later, spec
