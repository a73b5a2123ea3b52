"""``frba`` command line: simulate, evaluate, score, generate-data.

Exit codes: 0 success, 1 usage or invalid config, 2 data error, 3 internal.

Output directory layout, version 1::

    simulate:  layout.json config.yaml feature_manifest.txt
               report.jsonl global_model.json thresholds.json
    evaluate:  layout.json config.yaml feature_manifest.txt
               metrics.jsonl metrics.txt

Every file is written deterministically, so two runs with the same config
and ``workers: 1`` produce byte-identical directories.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from frba import __version__
from frba.autoencoder import ModelWeights, reconstruction_error
from frba.config import ConfigError, RunConfig, apply_override, emit_config, load_config, parse_assignment
from frba.data import DataError, LoadFilters, LoginRecord, ColumnMapping, generate_synthetic, load_dataset, parse_row, write_csv
from frba.evaluation import personalize, run_experiment
from frba.features import FEATURE_IDS, FeatureError, build_feature_vector, featurize_stream, manifest_hash, write_feature_manifest
from frba.federation import derive_seed, run_simulation
from frba.profile import ProfileError, UserProfile
from frba.risk import decide, start_session
from frba.thresholds import RiskThresholds, classify_risk_level

log = logging.getLogger("frba")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
LAYOUT_NAME = "frba-output"
LAYOUT_VERSION = 1

# flag dest -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "workers": "workers",
    "data": "data.path",
    "mapping": "data.mapping",
    "max_iter": "federation.max_iter",
    "mu": "train.proximal_mu",
    "learning_rate": "train.learning_rate",
    "asset_criticality": "risk.asset_criticality",
    "f_max": "risk.f_max",
    "n_users": "data.synthetic.n_users",
    "days": "data.synthetic.days",
    "anomaly_rate": "data.synthetic.anomaly_rate",
    "split_seed": "evaluation.split_seed",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override the config file)")
    g.add_argument("--config", help="YAML run config")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any dotted config key")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="threads for featurization; 1 is bit-reproducible")
    g.add_argument("--data", help="login CSV; omit to generate a synthetic log")
    g.add_argument("--mapping", help="YAML column mapping for --data")
    g.add_argument("--max-iter", type=int, dest="max_iter")
    g.add_argument("--mu", type=float, help="proximal coefficient; 0 gives FedAvg")
    g.add_argument("--learning-rate", type=float, dest="learning_rate")
    g.add_argument("--asset-criticality", type=int, dest="asset_criticality", choices=(1, 2, 3))
    g.add_argument("--f-max", type=int, dest="f_max")
    g.add_argument("--n-users", type=int, dest="n_users")
    g.add_argument("--days", type=int)
    g.add_argument("--anomaly-rate", type=float, dest="anomaly_rate")
    g.add_argument("--split-seed", type=int, dest="split_seed")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frba", description="Federated risk-based authentication toolkit.")
    p.add_argument("--version", action="version", version=f"frba {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run the federated simulation and save the global model")
    _config_flags(s)
    s.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("evaluate", help="compare F-RBA with the baselines on a user split")
    _config_flags(e)
    e.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("score", help="score one login against a saved model")
    _config_flags(c)
    c.add_argument("--model", required=True, help="directory written by 'simulate'")
    c.add_argument("--history", required=True, help="login CSV holding the user's earlier records")
    c.add_argument("--record", help="JSON file with the login to score ('-' for stdin)")
    c.add_argument("--field", action="append", default=[], metavar="NAME=VALUE", help="login field, repeatable")

    g = sub.add_parser("generate-data", help="write a synthetic login CSV")
    _config_flags(g)
    g.add_argument("--out", required=True, help="CSV file to write")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for item in args.set:
        key, value = parse_assignment(item)
        cfg = apply_override(cfg, key, value)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg = apply_override(cfg, key, value)
    return cfg.validate()


def load_records(cfg: RunConfig) -> list[LoginRecord]:
    if cfg.data.path is None:
        s = cfg.data.synthetic
        return generate_synthetic(s.n_users, s.days, s.anomaly_rate, cfg.seed)
    ds = load_dataset(cfg.data.path, cfg.column_mapping(), cfg.load_filters(), cfg.data.delimiter)
    if not ds.records:
        raise DataError(f"no users in {cfg.data.path} pass the load filters")
    return ds.records


def _write_layout(out: Path, command: str, files: list[str], cfg: RunConfig) -> None:
    (out / "config.yaml").write_text(emit_config(cfg), encoding="utf-8")
    write_feature_manifest(out / "feature_manifest.txt")
    doc = {
        "layout": LAYOUT_NAME,
        "version": LAYOUT_VERSION,
        "command": command,
        "files": sorted(files + ["config.yaml", "feature_manifest.txt"]),
        "manifest_hash": manifest_hash(),
    }
    (out / "layout.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_simulate(cfg: RunConfig, out_dir: str) -> int:
    out = _out_dir(out_dir)
    records = load_records(cfg)
    report = run_simulation(records, cfg.simulation_config())
    report.write(out / "report.jsonl")
    report.global_weights.save(out / "global_model.json")
    t = None if report.global_thresholds is None else report.global_thresholds.to_dict()
    (out / "thresholds.json").write_text(json.dumps(t, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _write_layout(out, "simulate", ["report.jsonl", "global_model.json", "thresholds.json"], cfg)
    final = report.mse_series[-1] if report.rounds else report.initial_mse
    print(f"rounds: {len(report.rounds)}  initial mse: {report.initial_mse:.6f}  final mse: {final:.6f}")
    if report.exhausted:
        print(f"note: data ran out before max_iter={cfg.federation.max_iter}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out_dir: str) -> int:
    out = _out_dir(out_dir)
    records = load_records(cfg)
    report = run_experiment(records, split_seed=cfg.evaluation.split_seed, cfg=cfg.experiment_config())
    (out / "metrics.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    text = report.to_text()
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    _write_layout(out, "evaluate", ["metrics.jsonl", "metrics.txt"], cfg)
    print(text, end="")
    return EXIT_OK


RECORD_MAPPING = ColumnMapping({f.name: f.name for f in fields(LoginRecord) if f.name != "ip_range"})


def read_record(path: str | None, assignments: list[str]) -> LoginRecord:
    """Login from a JSON object and/or NAME=VALUE flags (flags win)."""
    row: dict[str, str] = {}
    if path:
        try:
            text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
            doc = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read record {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError("record JSON must be an object")
        row.update({k: "" if v is None else str(v) for k, v in doc.items()})
    for item in assignments:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--field expects NAME=VALUE, got {item!r}")
        row[name.strip()] = value
    unknown = set(row) - set(RECORD_MAPPING.columns)
    if unknown:
        raise DataError(f"unknown record fields: {sorted(unknown)}")
    missing = [f for f in ("user_id", "timestamp", "ip", "success") if not row.get(f)]
    if missing:
        raise DataError(f"record lacks required fields: {missing}")
    try:
        return parse_row(row, RECORD_MAPPING)
    except (ValueError, TypeError) as exc:
        raise DataError(f"malformed record: {exc}") from exc


def load_model(model_dir: str) -> tuple[ModelWeights, RiskThresholds | None]:
    d = Path(model_dir)
    try:
        weights = ModelWeights.load(d / "global_model.json")
        t = json.loads((d / "thresholds.json").read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load model from {d}: {exc}") from exc
    if weights.manifest_hash and weights.manifest_hash != manifest_hash():
        raise DataError("model was trained with a different feature order")
    return weights, None if t is None else RiskThresholds.from_dict(t)


def score_login(cfg: RunConfig, weights: ModelWeights, global_t: RiskThresholds | None, history, record: LoginRecord) -> dict:
    """Replay ``history`` into a fresh profile, personalize, then score ``record``."""
    past = sorted(
        (r for r in history if r.user_id == record.user_id and r.timestamp < record.timestamp),
        key=lambda r: r.timestamp,
    )
    profile = UserProfile(record.user_id, **cfg.profile_kwargs())
    pairs, profile = featurize_stream(past, profile)
    calib = [v.values for r, v in pairs if r.success][-cfg.train.sample_cap :]
    seed = derive_seed(cfg.seed, 0x5C0)
    local_w, thresholds = personalize(
        weights, calib, cfg.simulation_config(), seed, global_t, cfg.evaluation.local_finetune
    )
    source = "personal" if thresholds is not global_t else "global"
    vec = build_feature_vector(profile, record)
    err = float(reconstruction_error(local_w, vec))
    rl = classify_risk_level(err, thresholds)
    failures = profile.failures.consecutive_failures + (0 if record.success else 1)
    session = start_session(vec, failures, f_max=cfg.risk.f_max, h_max=cfg.risk.h_max)
    decision = decide(record.timestamp, record.user_id, cfg.risk.asset_criticality, rl, session, err)
    out = json.loads(decision.to_json())
    out["risk_score"] = decision.score
    out["consecutive_failed_logins"] = failures
    out["thresholds"] = {"source": source, "t_lower": thresholds.t_lower, "t_upper": thresholds.t_upper}
    out["history_records"] = len(past)
    out["features"] = dict(zip(FEATURE_IDS, (float(x) for x in vec.values)))
    return out


def cmd_score(cfg: RunConfig, model_dir: str, history_path: str, record_path: str | None, assignments: list[str]) -> int:
    if not record_path and not assignments:
        raise UsageError("score needs --record or --field")
    record = read_record(record_path, assignments)
    weights, global_t = load_model(model_dir)
    filters = LoadFilters(min_records=1, max_empty_fraction=1.0, max_failure_fraction=1.0)
    history = load_dataset(history_path, cfg.column_mapping(), filters, cfg.data.delimiter).records
    print(json.dumps(score_login(cfg, weights, global_t, history, record), sort_keys=True))
    return EXIT_OK


def cmd_generate_data(cfg: RunConfig, out_path: str) -> int:
    s = cfg.data.synthetic
    records = generate_synthetic(s.n_users, s.days, s.anomaly_rate, cfg.seed)
    out = Path(out_path)
    if out.parent and not out.parent.exists():
        raise DataError(f"directory {out.parent} does not exist")
    n = write_csv(records, out, cfg.column_mapping(), cfg.data.delimiter)
    print(f"wrote {n} records for {s.n_users} users to {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"frba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out)
        if args.command == "score":
            return cmd_score(cfg, args.model, args.history, args.record, args.field)
        return cmd_generate_data(cfg, args.out)
    except (UsageError, ConfigError) as exc:
        print(f"frba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FeatureError, ProfileError) as exc:
        print(f"frba: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"frba: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
