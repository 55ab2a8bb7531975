import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from boxsplit.geometry import unit_cube
from boxsplit.server.app import create_app, stub_registry
from boxsplit.server.sessions import SessionCore, SessionStore, replay_events


@pytest.fixture()
def client(tmp_path):
    store = SessionStore(str(tmp_path / "store"))
    app = create_app(store, stub_registry())
    with TestClient(app) as c:
        c.store = store
        yield c


def make_session(client, family="table", seed=3):
    r = client.post("/v1/sessions", json={"family": family, "seed": seed})
    assert r.status_code == 201
    return r.json()


class TestSessionEndpoints:
    def test_create_returns_unit_cube(self, client):
        body = make_session(client)
        assert len(body["boxes"]) == 1
        assert np.allclose(body["boxes"][0], unit_cube().params())

    def test_distinct_ids(self, client):
        a = make_session(client)
        b = make_session(client)
        assert a["id"] != b["id"]

    def test_unknown_session_404(self, client):
        r = client.get("/v1/sessions/doesnotexist")
        assert r.status_code == 404
        assert r.json()["code"] == "unknown-session"

    def test_healthz_and_models(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}
        models = client.get("/v1/models").json()["models"]
        assert any(m["kind"] == "pivot" for m in models)

    def test_decode_unimplemented(self, client):
        sid = make_session(client)["id"]
        r = client.post(f"/v1/sessions/{sid}/decode")
        assert r.status_code == 501


class TestSuggestPivot:
    def test_root_only_uniform(self, client):
        sid = make_session(client)["id"]
        r = client.post(f"/v1/sessions/{sid}/suggest-pivot").json()
        assert r["index"] == 0
        assert r["probabilities"] == [1.0]

    def test_probabilities_sum_to_one(self, client):
        sid = make_session(client)["id"]
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
        probs = client.post(f"/v1/sessions/{sid}/suggest-pivot").json()["probabilities"]
        assert abs(sum(probs) - 1.0) < 1e-6

    def test_sequence_deterministic_per_session_seed(self, client):
        # two sessions with the same seed produce the same suggestion sequence
        a = make_session(client, seed=55)["id"]
        b = make_session(client, seed=55)["id"]
        for sid in (a, b):
            for _ in range(3):
                client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
        seq_a = [client.post(f"/v1/sessions/{a}/suggest-pivot").json()["index"] for _ in range(5)]
        seq_b = [client.post(f"/v1/sessions/{b}/suggest-pivot").json()["index"] for _ in range(5)]
        assert seq_a == seq_b


class TestSplitUpdateUndo:
    def test_split_increases_leaf_count(self, client):
        sid = make_session(client)["id"]
        body = client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"}).json()
        assert len(body["boxes"]) == 2

    def test_undo_restores_pre_split(self, client):
        sid = make_session(client)["id"]
        before = client.get(f"/v1/sessions/{sid}").json()["boxes"]
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "inpaint"})
        after = client.post(f"/v1/sessions/{sid}/undo").json()["boxes"]
        assert np.allclose(before, after)

    def test_split_transform_undo_undo(self, client):
        sid = make_session(client)["id"]
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "token"})
        boxes = client.get(f"/v1/sessions/{sid}").json()["boxes"]
        moved = list(boxes[0])
        moved[0] += 0.05
        client.patch(f"/v1/sessions/{sid}/boxes/0", json={"params": moved})
        client.post(f"/v1/sessions/{sid}/undo")
        final = client.post(f"/v1/sessions/{sid}/undo").json()["boxes"]
        assert len(final) == 1
        assert np.allclose(final[0], unit_cube().params())

    def test_update_identity_bumps_history(self, client):
        sid = make_session(client)["id"]
        boxes = client.get(f"/v1/sessions/{sid}").json()["boxes"]
        body = client.patch(f"/v1/sessions/{sid}/boxes/0", json={"params": boxes[0]}).json()
        assert body["history_depth"] == 1
        assert np.allclose(body["boxes"], boxes)

    def test_update_zero_side_rejected_no_mutation(self, client):
        sid = make_session(client)["id"]
        bad = list(unit_cube().params())
        bad[3] = 0.0
        r = client.patch(f"/v1/sessions/{sid}/boxes/0", json={"params": bad})
        assert r.status_code == 400
        assert r.json()["code"] == "invalid-box"
        assert client.get(f"/v1/sessions/{sid}").json()["history_depth"] == 0

    def test_update_then_undo_restores_exactly(self, client):
        sid = make_session(client)["id"]
        original = client.get(f"/v1/sessions/{sid}").json()["boxes"][0]
        moved = list(original)
        moved[1] -= 0.2
        client.patch(f"/v1/sessions/{sid}/boxes/0", json={"params": moved})
        back = client.post(f"/v1/sessions/{sid}/undo").json()["boxes"][0]
        assert np.max(np.abs(np.array(back) - np.array(original))) < 1e-12

    def test_pivot_out_of_range_400(self, client):
        sid = make_session(client)["id"]
        r = client.post(f"/v1/sessions/{sid}/split", json={"pivot": 5, "sampler": "conditional"})
        assert r.status_code == 400

    def test_unknown_sampler_400(self, client):
        sid = make_session(client)["id"]
        r = client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "nonsense"})
        assert r.status_code == 400

    def test_revision_conflict_409(self, client):
        sid = make_session(client)["id"]
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
        r = client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional", "revision": 0})
        assert r.status_code == 409

    def test_tree_endpoint_roundtrips(self, client):
        from boxsplit.hierarchy import deserialize_tree

        sid = make_session(client)["id"]
        client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
        text = client.get(f"/v1/sessions/{sid}/tree").text
        tree = deserialize_tree(text)
        assert len(tree.leaf_ids()) == 2


class TestPersistence:
    def test_session_recoverable_from_store(self, tmp_path):
        store_dir = str(tmp_path / "persist")
        store = SessionStore(store_dir)
        app = create_app(store, stub_registry())
        with TestClient(app) as c:
            sid = c.post("/v1/sessions", json={"family": "chair", "seed": 1}).json()["id"]
            c.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
            c.post(f"/v1/sessions/{sid}/split", json={"pivot": 1, "sampler": "conditional"})
            boxes_before = c.get(f"/v1/sessions/{sid}").json()["boxes"]

        fresh_store = SessionStore(store_dir)  # server restart
        app2 = create_app(fresh_store, stub_registry())
        with TestClient(app2) as c2:
            body = c2.get(f"/v1/sessions/{sid}").json()
            assert np.allclose(body["boxes"], boxes_before)

    def test_snapshot_compaction(self, tmp_path):
        store = SessionStore(str(tmp_path / "snap"))
        session = store.create("table", 0)
        rng = np.random.default_rng(0)
        for k in range(70):  # crosses the 64-event snapshot threshold
            params = session.core.leaves()[0].tolist()
            params[0] = float(rng.uniform(-0.1, 0.1))
            session.record({"op": "update", "leaf": 0, "params": params})
        reloaded = SessionStore(store.store_dir).get(session.id)
        assert np.allclose(reloaded.core.leaves(), session.core.leaves())
        assert reloaded.revision == session.revision


def random_action_sequence(core: SessionCore, rng: np.random.Generator, length: int) -> list[dict]:
    events = []
    for _ in range(length):
        n = len(core.leaf_ids)
        op = rng.choice(["split", "update", "undo"], p=[0.45, 0.35, 0.2])
        if op == "split":
            pivot = int(rng.integers(0, n))
            base = core.leaves()[pivot]
            kids = np.stack([base, base])
            kids[0][:3] += rng.uniform(-0.05, 0.05, 3)
            kids[1][:3] -= rng.uniform(-0.05, 0.05, 3)
            kids[:, 3:6] = np.maximum(kids[:, 3:6] * 0.6, 1e-3)
            event = {"op": "split", "pivot": pivot, "children": kids.tolist()}
        elif op == "update":
            leaf = int(rng.integers(0, n))
            params = core.leaves()[leaf].tolist()
            params[0] += float(rng.uniform(-0.02, 0.02))
            event = {"op": "update", "leaf": leaf, "params": params}
        else:
            event = {"op": "undo"}
        core.apply_event(event)
        events.append(event)
    return events


class TestReplayProperty:
    def test_thousand_random_action_sequences(self):
        # acceptance criterion: active leaves always equal history replay
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            core = SessionCore(family="table", seed=trial)
            events = random_action_sequence(core, rng, length=int(rng.integers(1, 12)))
            replayed = replay_events("table", trial, events)
            assert np.allclose(core.leaves(), replayed.leaves(), atol=0)
            assert core.leaf_ids == replayed.leaf_ids

    def test_concurrent_sessions_isolated(self, client):
        ids = [make_session(client, seed=i)["id"] for i in range(4)]
        errors = []

        def hammer(sid, k):
            try:
                for _ in range(10):
                    client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
                    client.post(f"/v1/sessions/{sid}/undo")
                final = client.get(f"/v1/sessions/{sid}").json()
                if len(final["boxes"]) != 1:
                    errors.append((sid, len(final["boxes"])))
            except Exception as exc:  # noqa: BLE001
                errors.append((sid, repr(exc)))

        threads = [threading.Thread(target=hammer, args=(sid, k)) for k, sid in enumerate(ids)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []

    def test_serialized_same_session_writes(self, client):
        # concurrent mutations of one session: every request lands on a coherent
        # state (leaf count equals 1 + applied splits - applied undos)
        sid = make_session(client)["id"]
        results = []

        def do_split():
            r = client.post(f"/v1/sessions/{sid}/split", json={"pivot": 0, "sampler": "conditional"})
            results.append(r.status_code)

        threads = [threading.Thread(target=do_split) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(code == 200 for code in results)
        body = client.get(f"/v1/sessions/{sid}").json()
        assert len(body["boxes"]) == 9
        assert body["history_depth"] == 8
