from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from medvqa_eval.fixtures import build_small_manifest, write_dataset_tree
from medvqa_eval.judge import load_verdicts
from medvqa_eval.server import create_app

from test_reporting import build_run


@pytest.fixture
def api(tmp_path):
    manifest = build_small_manifest(5)
    tree = write_dataset_tree(manifest, tmp_path / "data")
    build_run(tmp_path / "runs", "r1", manifest=manifest)
    run_dir = tmp_path / "runs" / "r1"
    # human raters start from a clean verdict file in these tests
    (run_dir / "verdicts.jsonl").unlink()
    app = create_app(
        run_dir,
        dataset_root=tree["root"],
        cache_dir=tmp_path / "cache",
    )
    client = TestClient(app)
    return client, manifest, run_dir


def _submit(client, rater, sample_id, level=3, ok=True):
    r1 = client.post(
        "/api/verdicts",
        json={"sample_id": sample_id, "rater_id": rater, "round": 1,
              "kind": "structure", "structure_ok": ok},
    )
    r2 = client.post(
        "/api/verdicts",
        json={"sample_id": sample_id, "rater_id": rater, "round": 1,
              "kind": "reasoning", "level": level, "rationale": "looks right"},
    )
    return r1, r2


class TestQueueAndProgress:
    def test_samples_listing(self, api):
        client, manifest, _ = api
        data = client.get("/api/samples").json()
        assert len(data["samples"]) == 5
        assert data["samples"][0]["image_url"].startswith("/api/media/images/")

    def test_queue_order_fixed_and_resumable(self, api):
        client, manifest, _ = api
        queue = client.get("/api/queue", params={"rater": "exp1"}).json()
        assert [i["sample"]["id"] for i in queue["items"]] == [
            s.id for s in manifest.samples
        ]
        assert queue["resume_index"] == 0

        _submit(client, "exp1", manifest.samples[0].id)
        queue = client.get("/api/queue", params={"rater": "exp1"}).json()
        assert queue["resume_index"] == 1
        assert queue["items"][0]["done"] is True
        assert queue["items"][0]["own_verdicts"]["reasoning"]["level"] == 3

    def test_progress_counts_server_side(self, api):
        client, manifest, _ = api
        for s in manifest.samples[:3]:
            _submit(client, "exp1", s.id)
        progress = client.get("/api/progress", params={"rater": "exp1"}).json()
        assert progress == {"rater": "exp1", "completed": 3, "total": 5, "position": 3}

    def test_structure_only_does_not_complete_item(self, api):
        client, manifest, _ = api
        sid = manifest.samples[0].id
        client.post(
            "/api/verdicts",
            json={"sample_id": sid, "rater_id": "exp1", "round": 1,
                  "kind": "structure", "structure_ok": True},
        )
        progress = client.get("/api/progress", params={"rater": "exp1"}).json()
        assert progress["completed"] == 0

    def test_rater_required(self, api):
        client, _, _ = api
        response = client.get("/api/queue")
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "MISSING_FIELD"


class TestVerdictValidation:
    def test_accepted_verdict_lands_in_file(self, api):
        client, manifest, run_dir = api
        r1, r2 = _submit(client, "exp1", manifest.samples[0].id)
        assert r1.status_code == 200 and r2.status_code == 200
        verdicts = load_verdicts(run_dir / "verdicts.jsonl")
        assert len(verdicts) == 2
        assert (run_dir / "rubric.json").is_file()

    def test_forged_level_rejected(self, api):
        client, manifest, run_dir = api
        response = client.post(
            "/api/verdicts",
            json={"sample_id": manifest.samples[0].id, "rater_id": "exp1",
                  "round": 1, "kind": "reasoning", "level": 5},
        )
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "OUT_OF_RANGE_LEVEL"
        assert not (run_dir / "verdicts.jsonl").exists()

    def test_unknown_sample_404(self, api):
        client, _, _ = api
        response = client.post(
            "/api/verdicts",
            json={"sample_id": "ghost", "rater_id": "exp1", "round": 1,
                  "kind": "reasoning", "level": 2},
        )
        assert response.status_code == 404
        assert response.json()["error"]["code"] == "UNKNOWN_SAMPLE"

    def test_bad_kind_and_missing_rater(self, api):
        client, manifest, _ = api
        sid = manifest.samples[0].id
        assert (
            client.post(
                "/api/verdicts", json={"sample_id": sid, "rater_id": "x", "kind": "vibes"}
            ).json()["error"]["code"]
            == "UNKNOWN_ENUM"
        )
        assert (
            client.post(
                "/api/verdicts", json={"sample_id": sid, "kind": "reasoning", "level": 2}
            ).json()["error"]["code"]
            == "MISSING_FIELD"
        )

    def test_rater_header_mismatch_rejected(self, api):
        client, manifest, _ = api
        response = client.post(
            "/api/verdicts",
            headers={"X-Rater": "someone-else"},
            json={"sample_id": manifest.samples[0].id, "rater_id": "exp1",
                  "round": 1, "kind": "reasoning", "level": 2},
        )
        assert response.status_code == 403

    def test_revise_last_supersedes(self, api):
        client, manifest, run_dir = api
        sid = manifest.samples[0].id
        _submit(client, "exp1", sid, level=1)
        client.post(
            "/api/verdicts",
            json={"sample_id": sid, "rater_id": "exp1", "round": 1,
                  "kind": "reasoning", "level": 3},
        )
        queue = client.get("/api/queue", params={"rater": "exp1"}).json()
        assert queue["items"][0]["own_verdicts"]["reasoning"]["level"] == 3


class TestAgreementEndpoint:
    def test_identical_raters_perfect_agreement(self, api):
        client, manifest, _ = api
        levels = [3, 1, 2, 0, 3]
        for rater in ("exp1", "exp2"):
            for s, level in zip(manifest.samples, levels):
                _submit(client, rater, s.id, level=level)
        results = client.get("/api/agreement").json()["results"]
        pair = next(
            r for r in results if {r["rater_a"], r["rater_b"]} == {"exp1", "exp2"}
        )
        assert pair["pearson_r"] == pytest.approx(1.0)
        assert pair["spearman_rho"] == pytest.approx(1.0)
        assert pair["n"] == 5

    def test_single_rater_no_results(self, api):
        client, manifest, _ = api
        _submit(client, "exp1", manifest.samples[0].id)
        assert client.get("/api/agreement").json()["results"] == []


class TestMedia:
    def test_image_served(self, api):
        client, manifest, _ = api
        url = client.get("/api/samples").json()["samples"][0]["image_url"]
        response = client.get(url)
        assert response.status_code == 200
        assert response.content.startswith(b"\x89PNG")

    def test_traversal_blocked(self, api):
        client, _, _ = api
        response = client.get("/api/media/images/../../etc/passwd")
        assert response.status_code in (403, 404)

    def test_unknown_prefix_404(self, api):
        client, _, _ = api
        assert client.get("/api/media/other/x.bin").status_code == 404
