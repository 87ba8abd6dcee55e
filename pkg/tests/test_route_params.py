import pytest


def test_derived_desk(client):
    response = client.get("/api/params/derived", params={"preset": "desk"})
    assert response.status_code == 200, response.text
    data = response.json()
    assert data["params"]["M"] == 32
    assert data["fs_hz"] == pytest.approx(3.84e6)
    assert data["d"] == 1
    assert data["pulse_len"] == 81


def test_derived_override(client):
    response = client.get("/api/params/derived", params={"preset": "desk", "Q": 160})
    assert response.status_code == 200, response.text
    data = response.json()
    assert data["ta_over_t"] == pytest.approx(10.0)
    assert data["d"] == 10


def test_derived_odd_doppler_bins(client):
    response = client.get("/api/params/derived", params={"preset": "desk", "N": 15})
    assert response.status_code == 422, response.text


def test_derived_prefix_too_long(client):
    response = client.get("/api/params/derived", params={"preset": "desk", "Lcp": 40})
    assert response.status_code == 422, response.text


def test_derived_bad_query(client):
    response = client.get("/api/params/derived", params={"Q": 0})
    assert response.status_code == 422, response.text
