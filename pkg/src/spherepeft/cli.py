"""Command-line entry point.

Exit codes: 0 success, 1 property failure or non-finite training, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .checks import FAULTS, run_checks
from .config import ConfigError, RunConfig, load_config
from .grad_engine import AdapterState
from .reports import energy_report, param_count_report
from .toy_model import make_pretrained
from .train import train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("spherepeft")


def _emit(payload: dict, out: Path | None = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out is not None:
        out.write_text(text + "\n")
    print(text)


def _config(path) -> RunConfig:
    cfg = load_config(path)
    override = os.environ.get("SEED_OVERRIDE")
    if override:
        try:
            cfg = cfg.replace(seed=int(override))
        except ValueError as exc:
            raise ConfigError(f"SEED_OVERRIDE must be an integer, got {override!r}") from exc
    return cfg


def _check_payload(results) -> dict:
    return {
        "schema": "check-report/1",
        "passed": all(r.passed for r in results),
        "properties": [r.to_dict() for r in results],
    }


def cmd_check(args) -> int:
    results = run_checks(args.filter, args.inject_fault or ())
    if not results:
        print(f"no property matches filter {args.filter!r}", file=sys.stderr)
        return EXIT_USAGE
    payload = _check_payload(results)
    _emit(payload)
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def cmd_tprod_selftest(args) -> int:
    payload = _check_payload(run_checks("tproduct"))
    _emit(payload)
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def train_report_payload(result) -> dict:
    payload = result.report.to_dict()
    payload["schema"] = "train-report/1"
    payload["config_hash"] = RunConfig.from_dict(payload["config"]).config_hash()
    return payload


def cmd_train(args) -> int:
    cfg = _config(args.config)
    state = moments = None
    if args.resume:
        state, moments = load_checkpoint(args.resume, cfg)
    try:
        result = train(cfg, state, moments)
    except FloatingPointError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = train_report_payload(result)
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    save_checkpoint(out / "checkpoint.bin", cfg, result.state, result.moments)
    losses = payload["losses"]
    print(
        json.dumps(
            {
                "iterations": len(losses),
                "initial_loss": losses[0],
                "final_loss": losses[-1],
                "trainable_to_frozen_ratio": payload["parameters"]["trainable_to_frozen_ratio"],
                "report": str(out / "report.json"),
                "checkpoint": str(out / "checkpoint.bin"),
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_energy_report(args) -> int:
    cfg = _config(args.config)
    state = AdapterState.init(cfg)
    if args.checkpoint:
        state, _ = load_checkpoint(args.checkpoint, cfg)
    payload = energy_report(cfg, state, make_pretrained(cfg, cfg.seed))
    _emit(payload, Path(args.out) if args.out else None)
    return EXIT_FAIL if payload["violations"] else EXIT_OK


def cmd_param_count(args) -> int:
    _emit(param_count_report(_config(args.config)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherepeft", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--filter", help="family or property name")
    p.add_argument("--inject-fault", action="append", choices=FAULTS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("train", help="fine-tune the toy encoder")
    p.add_argument("config")
    p.add_argument("--out", default=".", help="directory for report.json and checkpoint.bin")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("energy-report", help="per-layer hyperspherical energy")
    p.add_argument("config")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_energy_report)

    p = sub.add_parser("param-count", help="closed-form parameter accounting")
    p.add_argument("config")
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("tprod-selftest", help="T-product equivalence checks")
    p.set_defaults(func=cmd_tprod_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
