import json
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT.parent) not in sys.path:
    sys.path.insert(0, str(ROOT.parent))

from mpgig_ingarch.model import ModelSpec  # noqa: E402


@pytest.fixture(scope="session")
def oracles() -> dict:
    return json.loads((ROOT / "data" / "oracles.json").read_text())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def scheme1_spec() -> ModelSpec:
    return ModelSpec(
        p=2, i1=(1,), i2=(1,), d=[0.0, 0.0],
        a_mats=(np.diag([0.3, 0.25]),), b_mats=(np.diag([0.4, 0.3]),),
        phi=0.5, alpha=1.5,
    )


@pytest.fixture
def spec1() -> ModelSpec:
    return scheme1_spec()
