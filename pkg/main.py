from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from errors import ConfigError, ScenarioError
from logger import get_logger
from scenario import parse_config, probe_eta, run_multi_seed, run_scenario
from summarizer import generate_markdown


_LOG = get_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="dictator-sim")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario and write its artifacts")
    run.add_argument("config", help="Scenario YAML file")
    run.add_argument("--out", default=None, help="Output directory (default: the config's outputs)")

    verify = sub.add_parser("verify", help="Run a scenario and fail unless every check passes")
    verify.add_argument("config", help="Scenario YAML file")
    verify.add_argument("--out", default=None, help="Output directory (default: the config's outputs)")

    probe = sub.add_parser("probe-eta", help="Estimate the server step size with a probe update")
    probe.add_argument("config", help="Scenario YAML file with a probe client")

    report = sub.add_parser("report", help="Render accuracy and check tables from a run directory")
    report.add_argument("dir", help="Run directory")
    return parser.parse_args(argv)


def _print_json(data: object) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _execute(config_path: str, out: str | None) -> list:
    cfg = parse_config(config_path)
    if cfg.seeds:
        return run_multi_seed(cfg, out_dir=out)
    return [run_scenario(cfg, out_dir=out)]


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    try:
        if args.command == "report":
            markdown = generate_markdown(Path(args.dir))
            if markdown is None:
                print(f"no artifacts in {args.dir}", file=sys.stderr)
                return EXIT_USAGE
            print(markdown, end="")
            return EXIT_OK

        if args.command == "probe-eta":
            _print_json(probe_eta(parse_config(args.config)))
            return EXIT_OK

        results = _execute(args.config, args.out)
    except ConfigError as e:
        _LOG.warning("config_invalid count=%s first=%s", len(e.errors), e.errors[0] if e.errors else "")
        _print_json({"ok": False, "errors": e.errors})
        return EXIT_USAGE
    except ScenarioError as e:
        _LOG.error("scenario_error %s", e)
        _print_json({"ok": False, "errors": [str(e)]})
        return EXIT_FAILED

    for res in results:
        where = res.artifacts.get("accuracy")
        print(f"Scenario {res.config.name} seed={res.seed} done -> {where.parent if where else '-'}")

    if args.command == "verify":
        failed = [
            {"seed": res.seed, "claim_id": r.claim_id, "diff_inf_norm": r.diff_inf_norm}
            for res in results
            for r in res.reports
            if not r.passed
        ]
        failed += [
            {"seed": res.seed, "claim_id": f"{c.claim_id}:negative_control", "diff_inf_norm": c.diff_inf_norm}
            for res in results
            for c in res.controls
            if not c.checker_failed
        ]
        _print_json({"ok": not failed, "failed": failed})
        return EXIT_FAILED if failed else EXIT_OK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
