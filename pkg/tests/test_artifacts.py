"""Artifact files: run ids, JSON/CSV round trips, manifests."""
from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from execkit import __version__
from execkit.artifacts import (
    file_sha256,
    load_policy,
    make_run_id,
    manifest_payload,
    ortho_payload,
    policy_payload,
    read_csv,
    read_json,
    read_path_file,
    save_policy,
    write_crra_csv,
    write_csv,
    write_eval_csv,
    write_frontier_csv,
    write_json,
    write_manifest,
    write_path_file,
    write_pretrain_curve_csv,
    write_schedule_csv,
    write_train_curve_csv,
)
from execkit.evaluate import EvalReport
from execkit.ortho import decompose_market
from execkit.policy import MlpPolicy
from execkit.seeds import stream_rng


class TestRunId:
    def test_deterministic_and_short(self):
        a = make_run_id("ff" * 32, 7, "run")
        b = make_run_id("ff" * 32, 7, "run")
        assert a == b
        assert len(a) == 12
        assert int(a, 16) >= 0

    def test_sensitive_to_every_input(self):
        base = make_run_id("ff" * 32, 7, "run")
        assert make_run_id("fe" + "ff" * 31, 7, "run") != base
        assert make_run_id("ff" * 32, 8, "run") != base
        assert make_run_id("ff" * 32, 7, "frontier") != base


class TestJsonCsv:
    def test_json_round_trip(self, tmp_path):
        payload = {"b": [1, 2.5], "a": {"nested": True}}
        p = tmp_path / "x.json"
        write_json(p, payload)
        assert read_json(p) == payload
        # stable key order on disk keeps diffs and digests meaningful
        assert p.read_text().index('"a"') < p.read_text().index('"b"')

    def test_csv_round_trip(self, tmp_path):
        p = tmp_path / "x.csv"
        write_csv(p, ["i", "v"], [(0, 1.5), (1, -2.0)])
        rows = read_csv(p)
        assert rows == [{"i": "0", "v": "1.5"}, {"i": "1", "v": "-2.0"}]


class TestPolicyFiles:
    def test_round_trip_is_bitwise(self, tmp_path, three_asset_cfg):
        pol = MlpPolicy.init(three_asset_cfg.spec, 4, stream_rng(0, "pretrain"))
        pol.b1 += 0.25
        p = tmp_path / "policy.json"
        save_policy(p, pol, run_id="abc123abc123")
        back = load_policy(p)
        for a, b in zip(back.params, pol.params):
            assert np.array_equal(a, b)
        assert back.horizon == pol.horizon
        assert back.n_regimes == pol.n_regimes
        assert back.leak == pol.leak
        assert np.array_equal(back.initial_chunks, pol.initial_chunks)
        assert np.array_equal(back.initial_prices, pol.initial_prices)
        assert back.initial_value == pol.initial_value
        assert read_json(p)["run_id"] == "abc123abc123"

    def test_unsupported_version_rejected(self, tmp_path, three_asset_cfg):
        pol = MlpPolicy.init(three_asset_cfg.spec, 3, stream_rng(0, "pretrain"))
        payload = policy_payload(pol)
        payload["format_version"] = 99
        p = tmp_path / "policy.json"
        write_json(p, payload)
        with pytest.raises(ValueError, match="unsupported policy format version"):
            load_policy(p)


class TestOrthoPayload:
    def test_fields_round_trip(self, three_asset_cfg):
        dec = decompose_market(three_asset_cfg.spec, -1.0)
        payload = ortho_payload(dec, run_id="deadbeef0000")
        blob = json.loads(json.dumps(payload))
        assert np.array_equal(np.asarray(blob["weights"]), dec.weights)
        assert np.array_equal(np.asarray(blob["avg_impact"]), dec.avg_impact)
        assert np.array_equal(np.asarray(blob["inverse_weights"]), dec.inverse_weights)
        assert np.array_equal(np.asarray(blob["chunk_targets"]), dec.chunk_targets)
        assert np.array_equal(np.asarray(blob["eigenvalues"]), dec.eigenvalues)
        assert blob["tradable"] == [True, True, True]
        assert blob["symmetrized"] is False
        assert blob["run_id"] == "deadbeef0000"
        assert blob["format_version"] == 1


class TestPathFiles:
    def test_round_trip(self, tmp_path):
        regimes = np.array([0, 1, 1, 0, 1])
        returns = np.array([0.01, -0.02, 0.0, 0.004, -0.001])
        p = tmp_path / "path.csv"
        write_path_file(p, regimes, returns)
        r2, x2 = read_path_file(p, 5)
        assert np.array_equal(r2, regimes)
        assert np.array_equal(x2, returns)

    def test_any_row_order_is_accepted(self, tmp_path):
        p = tmp_path / "path.csv"
        write_csv(p, ["t", "regime", "return"],
                  [(2, 1, 0.3), (0, 0, 0.1), (1, 1, 0.2)])
        regimes, returns = read_path_file(p, 3)
        assert np.array_equal(regimes, [0, 1, 1])
        assert np.array_equal(returns, [0.1, 0.2, 0.3])

    def test_wrong_length(self, tmp_path):
        p = tmp_path / "path.csv"
        write_path_file(p, np.zeros(4, dtype=int), np.zeros(4))
        with pytest.raises(ValueError, match="path file has 4 rows, expected horizon 6"):
            read_path_file(p, 6)

    def test_duplicate_period(self, tmp_path):
        p = tmp_path / "path.csv"
        write_csv(p, ["t", "regime", "return"], [(0, 0, 0.1), (0, 1, 0.2)])
        with pytest.raises(ValueError, match="out of range or duplicated"):
            read_path_file(p, 2)

    def test_out_of_range_period(self, tmp_path):
        p = tmp_path / "path.csv"
        write_csv(p, ["t", "regime", "return"], [(0, 0, 0.1), (5, 1, 0.2)])
        with pytest.raises(ValueError, match="period 5 out of range"):
            read_path_file(p, 2)


class TestTableWriters:
    def test_train_and_pretrain_curves(self, tmp_path):
        curve = np.array([-1.0, -0.5])
        wealth = np.array([10.0, 11.0])
        write_train_curve_csv(tmp_path / "t.csv", curve, wealth, "rid")
        rows = read_csv(tmp_path / "t.csv")
        assert rows[1] == {"step": "1", "mean_wealth": "11.0",
                           "objective": "-0.5", "run_id": "rid"}
        write_pretrain_curve_csv(tmp_path / "p.csv", curve, "rid")
        rows = read_csv(tmp_path / "p.csv")
        assert [r["loss"] for r in rows] == ["-1.0", "-0.5"]

    def test_eval_csv_with_and_without_utility(self, tmp_path):
        reports = {"bench": EvalReport.from_wealth("bench", np.array([2.0, 4.0, 8.0]))}
        write_eval_csv(tmp_path / "u.csv", reports, gamma=-1.0, run_id="rid")
        row = read_csv(tmp_path / "u.csv")[0]
        assert row["strategy"] == "bench" and row["n_paths"] == "3"
        u = -1.0 / np.array([2.0, 4.0, 8.0])
        assert float(row["mean_utility"]) == pytest.approx(u.mean(), rel=1e-12)
        write_eval_csv(tmp_path / "n.csv", reports, gamma=None, run_id="rid")
        row = read_csv(tmp_path / "n.csv")[0]
        assert row["mean_utility"] == "" and row["se_utility"] == ""

    def test_frontier_csv(self, tmp_path):
        rows = [
            {"lambda": 0.2, "mean": 650.0, "std": 4.0, "restart_id": 0, "is_best": True},
            {"lambda": 0.2, "mean": 649.0, "std": 4.5, "restart_id": 1, "is_best": False},
        ]
        write_frontier_csv(tmp_path / "f.csv", rows, "rid")
        got = read_csv(tmp_path / "f.csv")
        assert got[0]["is_best"] == "1" and got[1]["is_best"] == "0"
        assert got[0]["lambda"] == "0.2"

    def test_crra_csv(self, tmp_path):
        rows = [{"gamma": -1.0, "strategy": "mlp", "n_paths": 10, "mean_wealth": 1.0,
                 "se_mean": 0.1, "median_wealth": 1.0, "std_wealth": 0.5,
                 "se_std": 0.05, "mean_utility": -0.9, "se_utility": 0.01}]
        write_crra_csv(tmp_path / "c.csv", rows, "rid")
        got = read_csv(tmp_path / "c.csv")[0]
        assert got["gamma"] == "-1.0" and got["strategy"] == "mlp"
        assert got["run_id"] == "rid"

    def test_schedule_csv_header_and_rows(self, tmp_path):
        rollout = {
            "schedule": np.array([2.0, 1.0]),
            "prices": np.array([1.0, 0.99]),
            "cash": np.array([1.99, 2.97]),
        }
        write_schedule_csv(tmp_path / "s.csv", rollout, np.array([0, 1]), "rid")
        rows = read_csv(tmp_path / "s.csv")
        assert list(rows[0]) == ["t", "regime", "chunks_sold", "price", "cash", "run_id"]
        assert rows[1] == {"t": "1", "regime": "1", "chunks_sold": "1.0",
                           "price": "0.99", "cash": "2.97", "run_id": "rid"}


class TestManifest:
    def test_payload_digests_and_fields(self, tmp_path):
        out = tmp_path / "table.csv"
        out.write_text("hello\n")
        manifest = manifest_payload(
            config_hash="ab" * 32, seed=3, command="run",
            stage_seconds={"dp": 1.5}, outputs={"table": out},
            created_utc="2026-01-01T00:00:00Z")
        assert manifest["run_id"] == make_run_id("ab" * 32, 3, "run")
        assert manifest["tool_version"] == __version__
        want = hashlib.sha256(b"hello\n").hexdigest()
        assert manifest["outputs"]["table"]["sha256"] == want
        assert file_sha256(out) == want
        assert manifest["stage_seconds"] == {"dp": 1.5}

    def test_write_manifest_round_trips(self, tmp_path):
        out = tmp_path / "x.json"
        write_json(out, {"v": 1})
        path = tmp_path / "manifest.json"
        payload = write_manifest(path, "cd" * 32, 9, "frontier",
                                 {"train": 2.0}, {"x": out}, "2026-01-02T03:04:05Z")
        assert read_json(path) == payload
        assert payload["seed"] == 9
        assert payload["command"] == "frontier"
        assert payload["created_utc"] == "2026-01-02T03:04:05Z"
