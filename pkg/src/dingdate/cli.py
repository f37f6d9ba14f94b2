"""Command-line client for the dating service.

Every subcommand is a thin HTTP client: it reads local files, posts them to
the service endpoints, and writes the responses back to disk.  By default an
in-process instance of the service handles the requests; pass --server to
target a running deployment instead (see README for `uvicorn` usage).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

from .train import history_to_csv

log = logging.getLogger("dingdate")

RECORD_KEY_ORDER = (
    "id", "dynasty", "period", "shape", "characteristics",
    "bboxes", "source", "split", "features",
)

ABLATION_TOKENS = {
    "no-mgm": ("mgm_fusion", False),
    "no-truncation": ("truncated_fusion", False),
    "no-akg": ("graph_loss", False),
    "shape-concat": ("shape_stage", "concat"),
    "shape-off": ("shape_stage", "off"),
    "char-concat": ("char_stage", "concat"),
    "char-off": ("char_stage", "off"),
    "char-first": ("stage_order", ["characteristic", "shape"]),
}


def make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=600.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

        from .service import app

        return TestClient(app)


def call(client, path: str, payload: dict) -> dict:
    log.debug("POST %s", path)
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise RuntimeError(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _dump_line(row: dict) -> str:
    ordered = {k: row[k] for k in RECORD_KEY_ORDER if row.get(k) is not None}
    return json.dumps(ordered, ensure_ascii=False, separators=(",", ":"))


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise RuntimeError(f"{path}: line {lineno}: {exc}") from None
    return rows


def _split_dataset_rows(rows: list[dict]) -> dict:
    records = []
    features = []
    has_features = any("features" in row for row in rows)
    for row in rows:
        row = dict(row)
        vec = row.pop("features", None)
        if has_features:
            if vec is None:
                raise RuntimeError("some records carry features and some do not")
            features.append(vec)
        records.append(row)
    return {"records": records, "features": features if has_features else None}


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, client) -> int:
    config = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        config["seed"] = args.seed
    result = call(client, "/synth", {"config": config})
    dataset = result["dataset"]
    features = dataset["features"]
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, record in enumerate(dataset["records"]):
            row = dict(record)
            if features is not None:
                row["features"] = features[i]
            fh.write(_dump_line(row))
            fh.write("\n")
    graph_out = args.graph_out or args.out + ".schema.json"
    with open(graph_out, "w", encoding="utf-8") as fh:
        json.dump(result["graph"], fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    print(f"wrote {len(dataset['records'])} records to {args.out}")
    print(f"wrote schema to {graph_out}")
    return 0


def cmd_train(args, client) -> int:
    config = _read_json(args.config) if args.config else {}
    if args.ablation:
        variant = dict(config.get("variant", {}))
        for token in args.ablation.split(","):
            token = token.strip()
            if not token:
                continue
            if token not in ABLATION_TOKENS:
                raise RuntimeError(
                    f"unknown ablation flag {token!r}; known: {sorted(ABLATION_TOKENS)}"
                )
            key, value = ABLATION_TOKENS[token]
            variant[key] = value
        config["variant"] = variant
    payload = {
        "graph": _read_json(args.graph),
        "dataset": _split_dataset_rows(_read_jsonl(args.data)),
        "config": config,
    }
    result = call(client, "/train", payload)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(result["checkpoint"], fh)
        fh.write("\n")
    history_path = args.history or args.out + ".history.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(result["history"]))
    metrics = result["val_metrics"]
    print(f"checkpoint written to {args.out}")
    print(f"history written to {history_path}")
    print(
        f"best epoch {result['best_epoch']}: "
        f"val dynasty OA {metrics['dynasty_oa']:.4f}, "
        f"val period OA {metrics['period_oa']:.4f}"
    )
    return 0


def _metrics_csv(metrics: dict) -> str:
    lines = ["metric,level,class,value"]
    for level in ("dynasty", "period"):
        lines.append(f"oa,{level},,{metrics[f'{level}_oa']:.10g}")
    for level in ("dynasty", "period"):
        lines.append(f"auprc,{level},,{metrics[f'auprc_{level}']:.10g}")
    for level in ("dynasty", "period"):
        for row in metrics["per_class"][level]:
            name = row["name"]
            lines.append(f"precision,{level},{name},{row['precision']:.10g}")
            lines.append(f"recall,{level},{name},{row['recall']:.10g}")
            lines.append(f"support,{level},{name},{row['support']}")
    return "\n".join(lines) + "\n"


def cmd_eval(args, client) -> int:
    payload = {
        "checkpoint": _read_json(args.ckpt),
        "dataset": _split_dataset_rows(_read_jsonl(args.data)),
        "split": args.split,
        "consistent_dynasty": args.consistent_dynasty,
    }
    result = call(client, "/eval", payload)
    metrics = result["metrics"]
    print(f"split {args.split}:")
    print(f"  dynasty OA     {metrics['dynasty_oa']:.4f}")
    print(f"  period OA      {metrics['period_oa']:.4f}")
    print(f"  dynasty AUPRC  {metrics['auprc_dynasty']:.4f}")
    print(f"  period AUPRC   {metrics['auprc_period']:.4f}")
    if args.out:
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        with open(args.out + ".csv", "w", encoding="utf-8") as fh:
            fh.write(_metrics_csv(metrics))
        print(f"metrics written to {args.out}.json and {args.out}.csv")
    return 0


def cmd_infer(args, client) -> int:
    rows = _read_jsonl(args.features)
    features = []
    ids = []
    for i, row in enumerate(rows):
        if "features" not in row:
            raise RuntimeError(f"{args.features}: record {i + 1} has no features")
        features.append(row["features"])
        ids.append(str(row.get("id", f"sample-{i:06d}")))
    payload = {
        "checkpoint": _read_json(args.ckpt),
        "features": features,
        "ids": ids,
        "consistent_dynasty": args.consistent_dynasty,
    }
    result = call(client, "/infer", payload)
    out = args.out or "-"
    lines = [
        json.dumps(pred, ensure_ascii=False, separators=(",", ":"))
        for pred in result["predictions"]
    ]
    if out == "-":
        for line in lines:
            print(line)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {len(lines)} predictions to {out}")
    return 0


def cmd_stats(args, client) -> int:
    payload = {
        "graph": _read_json(args.graph),
        "dataset": _split_dataset_rows(_read_jsonl(args.data)),
        "attribute": args.attribute,
    }
    result = call(client, "/stats", payload)
    print(result["table"])
    if args.out:
        report = {k: v for k, v in result.items() if k != "table"}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        print(f"report written to {args.out}")
    return 0


def cmd_gradcheck(args, client) -> int:
    result = call(client, "/gradcheck", {"seed": args.seed, "instances": args.instances})
    print(
        f"checked {result['entries_checked']} gradient entries over "
        f"{result['instances']} instances (seed {result['seed']})"
    )
    print(f"max relative error {result['max_rel_error']:.3g} "
          f"(tolerance {result['rel_tol']:.0e})")
    if result["worst_site"]:
        print(f"worst site: {result['worst_site']}")
    print("PASS" if result["passed"] else "FAIL")
    return 0 if result["passed"] else 1


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dingdate",
        description="Multi-granularity bronze-ding dating: synthesis, "
        "training, evaluation, inference, and dataset statistics.",
    )
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs in-process")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on internal parallelism (compute is "
                        "sequential and deterministic regardless)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tagged dataset")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="output dataset (JSON Lines)")
    p.add_argument("--graph-out", help="output schema path (default <out>.schema.json)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the four-head model")
    p.add_argument("--data", required=True, help="tagged dataset with features")
    p.add_argument("--graph", required=True, help="relation-graph schema JSON")
    p.add_argument("--config", help="JSON training configuration")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", help="metric history CSV (default <out>.history.csv)")
    p.add_argument("--ablation", help="comma-separated flags: "
                   + ",".join(sorted(ABLATION_TOKENS)))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a tagged split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--consistent-dynasty", action="store_true",
                   help="derive the dynasty from the predicted period's parent")
    p.add_argument("--out", help="prefix for metrics JSON/CSV outputs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="date feature vectors with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True,
                   help="JSON Lines with per-sample 'features' (and optional 'id')")
    p.add_argument("--consistent-dynasty", action="store_true")
    p.add_argument("--out", help="output JSON Lines (default: stdout)")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("stats", help="attribute information-gain report")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--attribute", required=True, choices=["shape", "characteristic"])
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("DINGDATE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    client = make_client(args.server)
    try:
        return args.fn(args, client)
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
