from __future__ import annotations

import json
from dataclasses import asdict, replace
from datetime import timedelta

import pytest

from frba.cli import main
from frba.data import LoadFilters, generate_synthetic, load_dataset, write_csv

SMALL = ["--n-users", "5", "--days", "60", "--max-iter", "4"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def default_model(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out)]) == 0
    return out


def test_default_simulate_runs_eighty_rounds(default_model):
    lines = (default_model / "report.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["round"] == 0
    assert len(lines) == 81
    assert json.loads(lines[-1])["round"] == 80
    layout = json.loads((default_model / "layout.json").read_text())
    assert layout["version"] == 1
    for name in layout["files"]:
        assert (default_model / name).exists()


def test_simulate_is_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "simulate", "--out", str(tmp_path / d), *SMALL)
        assert code == 0
    for name in ("report.jsonl", "global_model.json", "thresholds.json", "config.yaml", "layout.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_invalid_learning_rate_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--out", str(tmp_path), "--learning-rate", "0")
    assert code == 1
    assert "learning_rate" in err


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 3\nfederation:\n  max_iter: 2\ndata:\n  synthetic:\n    n_users: 4\n    days: 40\n")
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--set", "federation.max_iter=1")
    assert code == 0
    assert "rounds: 1" in out
    written = (tmp_path / "o" / "config.yaml").read_text()
    assert "seed: 3" in written and "max_iter: 1" in written
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path))
    assert code == 1


def test_evaluate_writes_all_metrics(tmp_path, capsys):
    code, out, _ = run(capsys, "evaluate", "--out", str(tmp_path), *SMALL)
    assert code == 0
    records = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    models = {r["model"] for r in records}
    assert models == {"frba", "frba_lower", "isolation_forest", "dbscan"}
    for r in records:
        assert {"accuracy", "precision", "recall", "f1"} <= set(r)
    assert "isolation_forest" in out


def test_evaluate_missing_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", "--out", str(tmp_path), "--data", str(tmp_path / "absent.csv"))
    assert code == 2
    assert "absent.csv" in err


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "simulate")[0] == 1
    assert run(capsys, "simulate", "--out", "x", "--seed", "abc")[0] == 1
    assert run(capsys, "--help")[0] == 0


@pytest.fixture(scope="module")
def history(tmp_path_factory):
    d = tmp_path_factory.mktemp("hist")
    records = generate_synthetic(1, 120, 0.0, seed=42)
    write_csv(records, d / "history.csv")
    return d, records


def record_flags(r, ts, success=True):
    doc = asdict(replace(r, timestamp=ts, success=success))
    doc.pop("ip_range")
    doc["timestamp"] = ts.isoformat()
    return [x for k, v in doc.items() for x in ("--field", f"{k}={'' if v is None else v}")]


def last_success(records):
    return [r for r in records if r.success][-1]


def test_score_stable_login_is_low_risk(default_model, history, capsys):
    d, records = history
    r = last_success(records)
    flags = record_flags(r, r.timestamp + timedelta(days=1))
    code, out, _ = run(
        capsys, "score", "--model", str(default_model), "--history", str(d / "history.csv"),
        "--asset-criticality", "1", *flags,
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["risk_score"] == 1
    assert doc["thresholds"]["source"] == "personal"
    assert doc["history_records"] == len(records)


def test_score_after_five_failures_reaches_critical(default_model, history, tmp_path, capsys):
    d, records = history
    r = last_success(records)
    ts = r.timestamp + timedelta(days=1)
    fails = [replace(r, timestamp=ts - timedelta(seconds=10 * k), success=False) for k in range(5, 0, -1)]
    write_csv(records + fails, tmp_path / "history.csv")
    code, out, _ = run(
        capsys, "score", "--model", str(default_model), "--history", str(tmp_path / "history.csv"),
        "--asset-criticality", "3", "--f-max", "4", *record_flags(r, ts),
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["consecutive_failed_logins"] == 5
    assert doc["risk_score"] == 5


def test_score_record_file_and_errors(default_model, history, tmp_path, capsys):
    d, records = history
    r = last_success(records)
    doc = asdict(r)
    doc.pop("ip_range")
    doc["timestamp"] = (r.timestamp + timedelta(days=1)).isoformat()
    path = tmp_path / "rec.json"
    path.write_text(json.dumps(doc))
    base = ["score", "--model", str(default_model), "--history", str(d / "history.csv")]
    assert run(capsys, *base, "--record", str(path))[0] == 0
    doc["rtt_ms"] = "fast"
    path.write_text(json.dumps(doc))
    assert run(capsys, *base, "--record", str(path))[0] == 2
    assert run(capsys, *base, "--field", "user_id=x")[0] == 2
    assert run(capsys, *base)[0] == 1
    assert run(capsys, "score", "--model", str(tmp_path), "--history", str(d / "history.csv"), "--record", str(path))[0] == 2


def test_generate_data(tmp_path, capsys):
    out = tmp_path / "log.csv"
    code, msg, _ = run(capsys, "generate-data", "--out", str(out), "--n-users", "2", "--days", "5", "--seed", "4")
    assert code == 0 and "2 users" in msg
    back = load_dataset(out, filters=LoadFilters(min_records=1)).records
    assert len(back) == len(generate_synthetic(2, 5, 0.05, seed=4))
    assert run(capsys, "generate-data", "--out", str(tmp_path / "no" / "dir.csv"))[0] == 2
