def test_read_root(client):
    response = client.get("/")
    assert response.status_code == 200, response.text
    assert response.json()["message"] == "ODDM link-level simulator"


def test_list_experiments(client):
    response = client.get("/api/experiments/")
    assert response.status_code == 200, response.text
    data = response.json()
    assert {item["name"] for item in data} == {"waveform", "psd", "ambiguity", "gram", "ber"}


def test_run_ambiguity(client, results_root):
    response = client.post(
        "/api/experiments/ambiguity",
        json={"settings": {"preset": "desk"}, "output_dir": "amb"},
    )
    assert response.status_code == 201, response.text
    data = response.json()
    assert data["experiment"] == "ambiguity"
    assert len(data["files"]) == 3
    assert (results_root / "amb" / "manifest.json").exists()


def test_run_invalid_settings(client, results_root):
    response = client.post(
        "/api/experiments/ambiguity",
        json={"settings": {"preset": "desk", "M": 0}},
    )
    assert response.status_code == 422, response.text
    data = response.json()
    assert any(issue.startswith("M") for issue in data["detail"])


def test_run_outside_results_directory(client, results_root):
    response = client.post(
        "/api/experiments/ambiguity",
        json={"settings": {"preset": "desk"}, "output_dir": "../escape"},
    )
    assert response.status_code == 422, response.text
    assert not (results_root.parent / "escape").exists()


def test_run_ber_too_large(client, results_root):
    response = client.post(
        "/api/experiments/ber",
        json={"settings": {"preset": "desk", "bits_per_point": 10_000_000}},
    )
    assert response.status_code == 413, response.text


def test_run_gram_without_basis(client, results_root):
    response = client.post(
        "/api/experiments/gram",
        json={"settings": {"preset": "desk", "systems": ["otfs"]}},
    )
    assert response.status_code == 422, response.text
    assert "analog or digital" in response.json()["detail"]


def test_run_unknown_experiment(client, results_root):
    response = client.post("/api/experiments/radar", json={"settings": {}})
    assert response.status_code == 422, response.text
