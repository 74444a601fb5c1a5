import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cspace_metrics import (
    BatterySpec,
    Criterion,
    frobenius_normalize,
    generate_battery,
    make_correlated,
)
from cspace_metrics.learning import aggregate, sample_choices
from cspace_metrics.service import ServiceConfig, create_app

CRITERIA = [c.value for c in Criterion]


@pytest.fixture(scope="module")
def battery(planar_arm):
    return generate_battery(
        planar_arm, BatterySpec(n_contraction=2, n_expansion=2, sweep_n=720), seed=21
    )


@pytest.fixture()
def client(battery, tmp_path):
    app = create_app(ServiceConfig(battery=battery, log_path=str(tmp_path / "log.jsonl")))
    return TestClient(app)


def answer_body(session_id, query_id, choice=0):
    return {
        "session_id": session_id,
        "query_id": query_id,
        "choices": {name: choice for name in CRITERIA},
    }


def walk_battery(client, choices_per_query):
    session = client.get("/api/session").json()
    sid = session["session_id"]
    answered = 0
    while True:
        r = client.get(f"/api/queries/{sid}")
        if r.status_code == 204:
            break
        view = r.json()
        choice = choices_per_query(view, answered)
        resp = client.post("/api/answers", json=answer_body(sid, view["query_id"], choice))
        assert resp.status_code == 200
        answered += 1
    return sid, answered


class TestSession:
    def test_new_session(self, client, battery):
        r = client.get("/api/session")
        assert r.status_code == 200
        payload = r.json()
        assert payload["cursor"] == 0
        assert payload["battery_len"] == len(battery)

    def test_distinct_ids(self, client):
        a = client.get("/api/session").json()["session_id"]
        b = client.get("/api/session").json()["session_id"]
        assert a != b

    def test_no_battery_503(self, tmp_path):
        app = create_app(ServiceConfig(battery=None, log_path=str(tmp_path / "log.jsonl")))
        assert TestClient(app).get("/api/session").status_code == 503


class TestQueries:
    def test_first_query_view(self, client, battery):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        assert view["query_id"] == battery.queries[0].id
        assert view["index"] == 0
        assert view["total"] == len(battery)
        assert len(view["candidates"]) == view["m"]
        assert view["links"] == [1.0, 1.0, 1.0]
        assert view["criteria"] == CRITERIA
        presented = battery.queries[0].presented
        np.testing.assert_allclose(view["candidates"], presented)

    def test_unknown_session_404(self, client):
        assert client.get("/api/queries/bogus").status_code == 404

    def test_exhausted_battery_204(self, client):
        sid, answered = walk_battery(client, lambda view, i: 0)
        assert client.get(f"/api/queries/{sid}").status_code == 204


class TestAnswers:
    def test_valid_body_advances_cursor(self, client, battery):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        r = client.post("/api/answers", json=answer_body(sid, view["query_id"]))
        assert r.status_code == 200
        assert r.json()["cursor"] == 1

    def test_duplicate_409(self, client):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        assert client.post("/api/answers", json=answer_body(sid, view["query_id"])).status_code == 200
        assert client.post("/api/answers", json=answer_body(sid, view["query_id"])).status_code == 409

    def test_partial_criteria_400(self, client):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        body = answer_body(sid, view["query_id"])
        del body["choices"][CRITERIA[0]]
        assert client.post("/api/answers", json=body).status_code == 400

    def test_out_of_range_choice_400(self, client):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        assert (
            client.post("/api/answers", json=answer_body(sid, view["query_id"], 99)).status_code
            == 400
        )

    def test_wrong_query_order_400(self, client, battery):
        sid = client.get("/api/session").json()["session_id"]
        later = battery.queries[2].id
        assert client.post("/api/answers", json=answer_body(sid, later)).status_code == 400


class TestDistributions:
    def test_aggregation_matches_offline(self, client, battery):
        rng = np.random.default_rng(5)
        rows = []
        for _ in range(4):
            sid, _ = walk_battery(
                client, lambda view, i: int(rng.integers(view["m"]))
            )
        r = client.get("/api/distributions", params={"criterion": "naturalness"})
        assert r.status_code == 200
        wire = r.json()
        # offline aggregation over the raw log must agree byte-for-byte
        log_records = [
            json.loads(line)
            for line in open(client.app.state.cspace.log.path, encoding="utf-8")
        ]
        offline = aggregate(
            [
                (rec["query_id"], rec["criterion"], rec["choice_index"])
                for rec in log_records
                if rec["criterion"] == "naturalness"
            ],
            battery.queries,
        )
        assert json.dumps(wire, sort_keys=True) == json.dumps(
            [d.to_dict() for d in offline], sort_keys=True
        )

    def test_empty_log_empty_list(self, client):
        assert client.get("/api/distributions", params={"criterion": "closeness"}).json() == []

    def test_criterion_filter(self, client):
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        body = answer_body(sid, view["query_id"])
        body["choices"]["naturalness"] = 1
        client.post("/api/answers", json=body)
        out = client.get("/api/distributions", params={"criterion": "naturalness"}).json()
        assert all(d["criterion"] == "naturalness" for d in out)
        assert len(out) == 1

    def test_task_type_filter(self, client, battery):
        walk_battery(client, lambda view, i: 0)
        both = client.get("/api/distributions", params={"criterion": "closeness"}).json()
        contraction = client.get(
            "/api/distributions",
            params={"criterion": "closeness", "task_type": "contraction"},
        ).json()
        contraction_ids = {q.id for q in battery.queries if q.task_type.value == "contraction"}
        assert {d["query_id"] for d in contraction} == contraction_ids
        assert len(both) > len(contraction)


class TestLearnEndpoint:
    def test_learn_from_synthetic_wire_answers(self, battery, tmp_path):
        app = create_app(ServiceConfig(battery=battery, log_path=str(tmp_path / "log.jsonl")))
        client = TestClient(app)
        M_true = frobenius_normalize(make_correlated(np.eye(3), [(0, 2, 0.8)]))
        sessions = sample_choices(M_true, battery.queries, k=40, seed=2)
        for session in sessions:
            sid = client.get("/api/session").json()["session_id"]
            while True:
                r = client.get(f"/api/queries/{sid}")
                if r.status_code == 204:
                    break
                view = r.json()
                query = battery.by_id(view["query_id"])
                perm = list(query.permutation)
                body = {
                    "session_id": sid,
                    "query_id": view["query_id"],
                    "choices": {
                        name: perm.index(session[view["query_id"]][Criterion(name)])
                        for name in CRITERIA
                    },
                }
                assert client.post("/api/answers", json=body).status_code == 200
        r = client.post("/api/learn", json={"criterion": "naturalness", "seed": 0})
        assert r.status_code == 200
        report = r.json()
        assert set(report) >= {"metric", "objective", "euclidean_kl", "learned_kl",
                               "per_query_kl", "iterations"}
        assert report["learned_kl"] < report["euclidean_kl"]

    def test_empty_split_422(self, client):
        r = client.post("/api/learn", json={"criterion": "naturalness"})
        assert r.status_code == 422

    def test_learn_busy_409(self, client):
        walk_battery(client, lambda view, i: 0)
        state = client.app.state.cspace
        assert state.learn_lock.acquire(blocking=False)
        try:
            r = client.post("/api/learn", json={"criterion": "naturalness"})
            assert r.status_code == 409
        finally:
            state.learn_lock.release()
        assert client.post("/api/learn", json={"criterion": "naturalness"}).status_code == 200

    def test_report_has_baseline_fields(self, client):
        walk_battery(client, lambda view, i: 0)
        r = client.post("/api/learn", json={"criterion": "predictability"})
        assert r.status_code == 200
        assert "euclidean_kl" in r.json() and "learned_kl" in r.json()


class TestPersistence:
    def test_restart_replays_log(self, battery, tmp_path):
        log_path = str(tmp_path / "log.jsonl")
        app = create_app(ServiceConfig(battery=battery, log_path=log_path))
        client = TestClient(app)
        rng = np.random.default_rng(11)
        for _ in range(3):
            walk_battery(client, lambda view, i: int(rng.integers(view["m"])))
        before = client.get("/api/distributions", params={"criterion": "closeness"}).content

        app2 = create_app(ServiceConfig(battery=battery, log_path=log_path))
        client2 = TestClient(app2)
        after = client2.get("/api/distributions", params={"criterion": "closeness"}).content
        assert before == after

    def test_restarted_session_cursor_preserved(self, battery, tmp_path):
        log_path = str(tmp_path / "log.jsonl")
        app = create_app(ServiceConfig(battery=battery, log_path=log_path))
        client = TestClient(app)
        sid = client.get("/api/session").json()["session_id"]
        view = client.get(f"/api/queries/{sid}").json()
        client.post("/api/answers", json=answer_body(sid, view["query_id"]))

        app2 = create_app(ServiceConfig(battery=battery, log_path=log_path))
        client2 = TestClient(app2)
        view2 = client2.get(f"/api/queries/{sid}").json()
        assert view2["index"] == 1

    def test_log_is_append_only_jsonl(self, battery, tmp_path):
        log_path = tmp_path / "log.jsonl"
        app = create_app(ServiceConfig(battery=battery, log_path=str(log_path)))
        client = TestClient(app)
        walk_battery(client, lambda view, i: 0)
        lines = log_path.read_text().strip().splitlines()
        assert len(lines) == len(battery) * 4
        for line in lines:
            record = json.loads(line)
            assert record["type"] == "answer"
            assert "received_at" in record
