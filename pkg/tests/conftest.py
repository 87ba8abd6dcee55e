import pytest
from fastapi.testclient import TestClient

from main import app
from src.conf.config import settings
from src.schemas import OddmParams
from src.services.pulse import srrc_pulse


@pytest.fixture(scope="module")
def desk_params():
    # Ta ~ 0.3 T
    return OddmParams.preset("desk", Lcp=4)


@pytest.fixture(scope="module")
def desk_pulse(desk_params):
    return srrc_pulse(desk_params)


@pytest.fixture(scope="module")
def long_params():
    # Ta = T, truncation floor well below -40 dB
    return OddmParams.preset("desk", Q=16, Lcp=4)


@pytest.fixture(scope="module")
def long_pulse(long_params):
    return srrc_pulse(long_params)


@pytest.fixture(scope="module")
def client():
    yield TestClient(app)


@pytest.fixture
def results_root(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "output_dir", str(tmp_path))
    return tmp_path
