"""
Command line interface:

    riskconv evaluate  --scenario FILE --position NAME --measure NAME
    riskconv convolve  --scenario FILE --position NAME [--method M] [--n-max N]
    riskconv allocate  --scenario FILE --position NAME [--improve] [--certify] [--allocation FILE]
    riskconv arbitrage --scenario FILE --position NAME --measure NAME [--m-grid a,b,c] [--csv FILE]

Exit codes: 0 success, 1 internal error, 2 name or scenario error, 3 method precondition,
4 allocation precondition, 5 arbitrage precondition.
"""

import sys
import json
import logging
import argparse
import numpy as np
from . import __version__
from .shared import (RiskConvError, NameResolutionError, ScenarioError, SizeError, UnsupportedMeasureError,
                     PreconditionError, fmt_float, TOLERANCES)
from .space import upper_partial_moment
from .measures import evaluate, acceptance_check, properties, subgradient_face
from .convolution import convolve, optimal_allocation
from .allocation import (is_comonotone_family, comonotone_improve, check_optimal, subgradient_intersection_check,
                         flatness_check)
from .arbitrage import tau
from .scenario import Scenario, load_allocation
from . import lp


logger = logging.getLogger("riskconv")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_NAMES = 2
EXIT_METHOD = 3
EXIT_ALLOCATION = 4
EXIT_ARBITRAGE = 5


class CommandFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def stable(value):
    """JSON-ready copy with floats at 12 significant digits and symbolic infinities."""
    if isinstance(value, dict):
        return {str(k): stable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [stable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    return value


def dumps(report):
    return json.dumps(stable(report), sort_keys=True, indent=2)


def _dual_witness(spec, x):
    """A dual vector attaining rho(X), or None when the face is too large to export."""
    try:
        face = subgradient_face(spec, x)
    except SizeError as error:
        logger.info("no dual witness: %s", error)
        return None
    if face.is_point:
        return face.point.tolist()
    system = face.system
    result = lp.solve_lp(np.zeros(system.atom_count), system.A_ub if len(system.b_ub) else None,
                         system.b_ub if len(system.b_ub) else None, system.A_eq, system.b_eq)
    return result.x.tolist() if result.success else None


def cmd_evaluate(scenario, args):
    spec = scenario.measure(args.measure)
    x = scenario.position(args.position)
    report = {"measure": spec.label, "position": args.position, "value": evaluate(spec, x),
              "accepted": acceptance_check(spec, x)}
    if properties(spec).convex:
        report["dual_witness"] = _dual_witness(spec, x)
    return report


def cmd_convolve(scenario, args):
    x = scenario.position(args.position)
    try:
        result = convolve(scenario.roster, scenario.weights, x, args.method, args.n_max)
    except (ScenarioError, NameResolutionError):
        raise
    except (UnsupportedMeasureError, PreconditionError, SizeError) as error:
        raise CommandFailed(EXIT_METHOD, "method {:s} not applicable: {}".format(args.method, error))
    except RiskConvError as error:
        raise CommandFailed(EXIT_METHOD, "method {:s} failed: {}".format(args.method, error))
    report = result.as_dict()
    report["position"] = args.position
    return report


def _ssd_table(before, after):
    rows = []
    for i in sorted(before.components):
        old, new = before.components[i], after.component(i)
        for t in np.union1d(old.values, new.values):
            rows.append({"index": i, "threshold": float(t), "before": upper_partial_moment(old, t),
                         "after": upper_partial_moment(new, t)})
    return rows


def _certificates(allocation, scenario, x, reference):
    roster, mu = scenario.roster, scenario.weights
    checks = {"value_match": lambda: check_optimal(allocation, roster, mu, x, reference),
              "subgradient_intersection": lambda: subgradient_intersection_check(allocation, roster, mu, x),
              "flatness": lambda: flatness_check(allocation, roster, mu, x)}
    report = {}
    for name, check in checks.items():
        try:
            report[name] = check().as_dict()
        except (UnsupportedMeasureError, PreconditionError, SizeError) as error:
            report[name] = {"applicable": False, "reason": str(error)}
    return report


def cmd_allocate(scenario, args):
    x = scenario.position(args.position)
    roster, mu = scenario.roster, scenario.weights
    try:
        if args.allocation:
            allocation = load_allocation(args.allocation, scenario)
        elif args.named_allocation:
            allocation = scenario.allocation(args.named_allocation)
        else:
            allocation = None
        if allocation is None:
            allocation, result = optimal_allocation(roster, mu, x)
        else:
            result = convolve(roster, mu, x) if args.certify else None
        report = {"position": args.position, "allocation": allocation.to_json(),
                  "weighted_risk": allocation.weighted_risk(roster), "comonotone": is_comonotone_family(allocation)}
        if result is not None:
            report["value"] = result.value
            report["method"] = result.method.value
        if args.improve:
            improved = comonotone_improve(allocation, x)
            report["improvement"] = {"allocation": improved.to_json(), "weighted_risk": improved.weighted_risk(roster),
                                     "comonotone": is_comonotone_family(improved), "ssd": _ssd_table(allocation, improved)}
            allocation = improved
        if args.certify:
            report["certificates"] = _certificates(allocation, scenario, x, result.value)
    except (ScenarioError, NameResolutionError):
        raise
    except RiskConvError as error:
        raise CommandFailed(EXIT_ALLOCATION, str(error))
    return report


def _parse_grid(text):
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError("m-grid must be a comma separated list of numbers", "--m-grid")
    if not grid:
        raise ScenarioError("m-grid is empty", "--m-grid")
    return grid


def cmd_arbitrage(scenario, args):
    spec = scenario.measure(args.measure)
    x = scenario.position(args.position)
    grid = _parse_grid(args.m_grid) if args.m_grid else None
    try:
        report = tau(spec, scenario.weights, x, grid)
    except (ScenarioError, NameResolutionError):
        raise
    except RiskConvError as error:
        raise CommandFailed(EXIT_ARBITRAGE, str(error))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as f:
            f.write("m,objective\n")
            for m, value in report.descent_trace:
                f.write("{:.12g},{:.12g}\n".format(m, value))
    result = report.as_dict()
    result["measure"] = spec.label
    return result


def _cell(value, digits):
    return "{:.{}g}".format(value, digits) if isinstance(value, float) else str(value)


def render(command, report):
    """Human-readable tables."""
    lines = ["riskconv {:s}".format(command), ""]
    scalars = [(k, v) for k, v in sorted(report.items()) if not isinstance(v, (dict, list))]
    for key, value in scalars:
        if isinstance(value, float):
            value = "{:.12g}".format(value)
        lines.append("{:<18s} {}".format(key, value))
    allocation = report.get("allocation")
    if isinstance(allocation, dict):
        lines.append("")
        lines.append("{:>6s}  {:s}".format("index", "component"))
        for index, values in sorted(allocation.items(), key=lambda kv: int(kv[0])):
            lines.append("{:>6s}  {:s}".format(index, " ".join("{:>12.6g}".format(v) for v in values)))
    if "improvement" in report:
        lines.append("")
        lines.append("{:>6s} {:>14s} {:>14s} {:>14s}".format("index", "threshold", "E(X-t)+ old", "E(X-t)+ new"))
        for row in report["improvement"]["ssd"]:
            lines.append("{:>6d} {:>14.8g} {:>14.8g} {:>14.8g}".format(row["index"], row["threshold"], row["before"], row["after"]))
    for name, certificate in sorted(report.get("certificates", {}).items()):
        verdict = certificate.get("certified")
        status = "n/a ({:s})".format(certificate["reason"]) if verdict is None else ("ok" if verdict else "rejected")
        lines.append("certificate {:<26s} {:s}".format(name, status))
    if report.get("descent_trace"):
        lines.append("")
        lines.append("{:>16s} {:>20s}".format("m", "objective"))
        for m, value in report["descent_trace"]:
            lines.append("{:>16s} {:>20s}".format(_cell(m, 8), _cell(value, 12)))
    for note in report.get("notes", []):
        lines.append("note: " + note)
    return "\n".join(lines)


COMMANDS = {"evaluate": cmd_evaluate, "convolve": cmd_convolve, "allocate": cmd_allocate, "arbitrage": cmd_arbitrage}


def build_parser():
    parser = argparse.ArgumentParser(prog="riskconv", description="Weighted inf-convolutions of risk measures")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--position", required=True, help="position name in the scenario")
        p.add_argument("--json", action="store_true", help="emit a JSON report")
        return p

    p = command("evaluate", "evaluate one measure on a position")
    p.add_argument("--measure", required=True)
    p = command("convolve", "compute the weighted inf-convolution of the roster")
    p.add_argument("--method", default="auto", choices=["auto", "closed", "dual", "penalty", "oracle"])
    p.add_argument("--n-max", type=int, default=None, help="number of indices for the primal oracle")
    p = command("allocate", "best-known allocation, improvement and certificates")
    p.add_argument("--improve", action="store_true", help="comonotone improvement of the allocation")
    p.add_argument("--certify", action="store_true", help="run every applicable optimality certificate")
    p.add_argument("--allocation", help="allocation JSON file to start from")
    p.add_argument("--named-allocation", help="allocation name in the scenario to start from")
    p = command("arbitrage", "regulatory arbitrage of a single measure")
    p.add_argument("--measure", required=True)
    p.add_argument("--m-grid", help="comma separated descent parameters")
    p.add_argument("--csv", help="write the descent trace to this CSV file")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logger.debug("tolerances %r", TOLERANCES)
    try:
        scenario = Scenario.load(args.scenario)
        report = COMMANDS[args.command](scenario, args)
    except (ScenarioError, NameResolutionError) as error:
        print("error: {}".format(error), file=sys.stderr)
        return EXIT_NAMES
    except CommandFailed as error:
        print("error: {}".format(error), file=sys.stderr)
        return error.code
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL
    print(dumps(report) if args.json else render(args.command, stable(report)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
