# SPDX-License-Identifier: MIT

from __future__ import annotations

import argparse
import logging
import sys

from importlib import resources
from pathlib import Path

from .exceptions import BudgetExceeded, ScenarioError
from .monitor import Deployment
from .scenario import load_scenario, run


def bundled_scenarios() -> list[str]:
    """
    Names of the scenarios shipped with the package.
    """
    root = resources.files("rezone") / "scenarios"
    return sorted(
        p.name.removesuffix(".yaml")
        for p in root.iterdir()
        if p.name.endswith(".yaml")
    )


def _resolve(spec: str) -> Path:
    path = Path(spec)
    if path.exists() or spec not in bundled_scenarios():
        return path

    return Path(str(resources.files("rezone") / "scenarios" / f"{spec}.yaml"))


def main(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(
        prog="rezone-sim",
        description="Simulate zone isolation on a TrustZone-class SoC.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="More logging; repeat for debug output.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser(
        "run",
        help="Run a scenario file.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    r.add_argument(
        "spec", help="Scenario file, or the name of a bundled scenario."
    )
    r.add_argument("--depth", type=int, help="Exploration depth.")
    r.add_argument("--seed", type=int, help="Token and schedule seed.")
    r.add_argument(
        "--config",
        choices=[d.value for d in Deployment],
        help="Deployment to simulate.",
    )
    r.add_argument("--trace", help="Write the trace log here (JSON lines).")
    r.add_argument("--report", help="Write the property report here (JSON).")
    r.add_argument("--cost", help="Write the cost table here (CSV).")
    r.add_argument(
        "--explore",
        action="store_true",
        help="Explore every interleaving up to the depth.",
    )

    sub.add_parser("list", help="List the bundled scenarios.")

    args = parser.parse_args(argv[1:])

    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[
            min(args.verbose, 2)
        ],
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "list":
        for name in bundled_scenarios():
            print(name)
        return 0

    try:
        spec = load_scenario(_resolve(args.spec)).with_overrides(
            depth=args.depth,
            seed=args.seed,
            deployment=Deployment(args.config) if args.config else None,
            exhaustive=args.explore,
        )
    except ScenarioError as e:
        print(f"rezone-sim: invalid scenario: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"rezone-sim: {e}", file=sys.stderr)
        return 2

    try:
        result = run(spec)
    except BudgetExceeded as e:
        print(f"rezone-sim: {e}", file=sys.stderr)
        return 1

    result.write(trace=args.trace, report=args.report, cost=args.cost)

    print(f"{spec.name}: {'ok' if result.ok else 'FAILED'} ({spec.mode})")
    if result.attack is not None:
        outcome = "blocked" if result.attack.blocked else "succeeded"
        print(f"  {result.attack.attack.value}: {outcome}")
    for v in result.verdicts:
        status = "holds" if v.holds else f"VIOLATED: {v.detail}"
        print(f"  {v.property.value}: {status}")
    if result.exploration is not None:
        x = result.exploration
        print(f"  {x.states} states, {x.transitions} transitions")

    return result.exit_code


def cli() -> None:
    sys.exit(main(sys.argv))


if __name__ == "__main__":  # pragma: no cover
    cli()
