"""
Command-line surface for the sparse dyadic experiments

Artifact commands (gen-rule, gen-data, fit, approx, rates) write their
document to --out, or to standard output. Report commands (risk,
assouad-check, circle, cantor, shatter, bounds) print LABEL: value lines and
write the report as JSON when --out is given. Logs go to standard error.
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from fractions import Fraction
from typing import Any, Dict, List, Optional

from boundary_geometry import (circle_chain, disc, fat_cantor_certified_floor, fat_cantor_limit,
                               fat_cantor_measure)
from config import config
from errors import ConfigurationError, DocumentError, SparseDyadicError
from experiment_runner import ExperimentConfig, parse_table_spec, ratio_spread, run_rates
from json_manager import JSONManager
from plugin_estimator import (approximate, bias_variance, bound_epsilon_for_level,
                              exponential_rate_constant, fit, select_j, theoretical_bound,
                              truncated_rate_constant)
from rule_tree import RuleTree, depth, l1_distance, to_document
from sparse_class import (WeightFunction, is_nontrivial, j_epsilon, parse_weight, sample_rule,
                          shatter_witness, tail_bounds, to_fraction)
from synthetic_dist import (assouad_family, assouad_lower_bound, assouad_membership_condition,
                            bayes_risk, bayes_rule, dgl_lower_bound, excess_risk, family_in_class,
                            hellinger_product_bruteforce, hellinger_sq, hellinger_tensorized,
                            make_distribution, risk, sample)

logger = logging.getLogger(__name__)

_REQUIRED = object()


# Argument helpers

def _get(args: argparse.Namespace, name: str, default: Any = _REQUIRED) -> Any:
    value = getattr(args, name, None)
    if value is None:
        if default is _REQUIRED:
            raise ConfigurationError(f"--{name.replace('_', '-')} is required")
        return default
    return value


def _json_or_text(value: Any) -> Any:
    if isinstance(value, str) and value.strip().startswith(('{', '[')):
        try:
            return json.loads(value)
        except json.JSONDecodeError as e:
            raise DocumentError(f"Cannot parse '{value}': {e}")
    return value


def parse_weight_arg(value: Any, dim: int) -> WeightFunction:
    """A weight spec object, its JSON text, or the shorthand minimal | truncated:K | exponential:alpha"""
    value = _json_or_text(value)
    if isinstance(value, dict):
        return parse_weight(value, dim)
    kind, _, parameter = str(value).partition(':')
    kind = kind.strip().lower()
    if kind == 'minimal':
        return parse_weight({"kind": "minimal"}, dim)
    if kind == 'truncated' and parameter:
        try:
            return parse_weight({"kind": "truncated", "K": int(parameter)}, dim)
        except ValueError:
            raise DocumentError(f"Truncation level must be an integer, got '{parameter}'")
    if kind == 'exponential' and parameter:
        return parse_weight({"kind": "exponential", "alpha": parameter}, dim)
    raise DocumentError(f"Cannot read weight spec '{value}'")


def _apply_config_file(args: argparse.Namespace, document: Dict[str, Any]):
    # Values from --config fill only the options left unset on the command line
    for key, value in document.items():
        name = key.replace('-', '_')
        if getattr(args, name, None) is None:
            setattr(args, name, value)


def _print_report(title: str, report: Dict[str, Any]):
    print(title)
    print("=" * 60)
    for key, value in report.items():
        print(f"{key.upper().replace('_', ' ')}: {value}")


def _finish_report(title: str, report: Dict[str, Any], args: argparse.Namespace,
                   manager: JSONManager) -> int:
    _print_report(title, report)
    if args.out:
        manager.save_report(report, args.out)
    return 0


def _rational(value: Fraction) -> str:
    return f"{value} ({float(value):.12g})"


def _emit_rule(f: RuleTree, args: argparse.Namespace, manager: JSONManager):
    if args.out:
        manager.save_rule(f, args.out)
    else:
        print(json.dumps(to_document(f), indent=2))


# Artifact commands

def cmd_gen_rule(args: argparse.Namespace, manager: JSONManager) -> int:
    dim = int(_get(args, 'd', 1))
    w = parse_weight_arg(_get(args, 'weight'), dim)
    f = sample_rule(w, int(_get(args, 'depth', config.RULE_DEPTH)),
                    int(_get(args, 'seed', config.DEFAULT_SEED)), float(_get(args, 'expand', 0.5)))
    logger.info(f"Generated rule of depth {depth(f)} from {w}")
    _emit_rule(f, args, manager)
    return 0


def cmd_gen_data(args: argparse.Namespace, manager: JSONManager) -> int:
    if getattr(args, 'dist', None):
        dist = manager.load_distribution(args.dist)
    else:
        fstar = manager.load_rule(_get(args, 'rule'))
        h = to_fraction(_get(args, 'h'))
        density = parse_table_spec(_json_or_text(_get(args, 'density', 'uniform')), fstar.dim, Fraction(1))
        margin = parse_table_spec(_json_or_text(_get(args, 'margin', None)), fstar.dim, h)
        dist = make_distribution(fstar, margin, density, h, _get(args, 'a', 1), _get(args, 'A', 1))
    if getattr(args, 'dist_out', None):
        manager.save_distribution(dist, args.dist_out)

    data = sample(dist, int(_get(args, 'n')), int(_get(args, 'seed', config.DEFAULT_SEED)))
    if args.out:
        manager.save_dataset(data, args.out)
    else:
        sys.stdout.write(manager.save_dataset(data))
    return 0


def cmd_fit(args: argparse.Namespace, manager: JSONManager) -> int:
    data = manager.load_dataset(_get(args, 'data'))
    level = getattr(args, 'level', None)
    if level is None:
        level = select_j(data.size, _get(args, 'a', 1), data.dim)
        logger.info(f"Selected J_n={level} for n={data.size}")
    fitted = fit(data, int(level))
    if getattr(args, 'counts', None):
        manager.save_counts(fitted, args.counts)
    f = fitted.to_rule()
    logger.info(f"Fitted level {fitted.level} on {data.size} samples: canonical depth {depth(f)}")
    _emit_rule(f, args, manager)
    return 0


def cmd_approx(args: argparse.Namespace, manager: JSONManager) -> int:
    dist = manager.load_distribution(_get(args, 'dist'))
    w = parse_weight_arg(_get(args, 'weight'), dist.dim)
    eps = to_fraction(_get(args, 'eps'))
    f = approximate(dist, eps, w)
    logger.info(f"J_eps={j_epsilon(w, eps, dist.A)}: excess risk {excess_risk(dist, f)} for eps={eps}")
    _emit_rule(f, args, manager)
    return 0


def cmd_rates(args: argparse.Namespace, manager: JSONManager) -> int:
    document = manager.load_config(_get(args, 'config'))
    for name in ('seed', 'trials', 'parallelism'):
        if getattr(args, name, None) is not None:
            document[name] = getattr(args, name)
    if args.out:
        document['output'] = args.out
    experiment = ExperimentConfig.from_dict(document)

    started_at = datetime.now().isoformat()
    rows = run_rates(experiment)
    text = manager.save_rates([row.as_dict() for row in rows], experiment.output)
    if not experiment.output:
        sys.stdout.write(text)

    manager.save_run_log({
        "command": "rates",
        "config": experiment.to_dict(),
        "started_at": started_at,
        "rows": [row.as_dict() for row in rows],
        "ratio_spread": ratio_spread(rows)
    })
    return 0


# Report commands

def cmd_risk(args: argparse.Namespace, manager: JSONManager) -> int:
    dist = manager.load_distribution(_get(args, 'dist'))
    f = manager.load_rule(_get(args, 'rule'))
    report = {
        "excess_risk": _rational(excess_risk(dist, f)),
        "risk": _rational(risk(dist, f)),
        "bayes_risk": _rational(bayes_risk(dist)),
        "l1_distance": _rational(l1_distance(f, bayes_rule(dist)))
    }
    return _finish_report("EXACT RISK", report, args, manager)


def cmd_assouad_check(args: argparse.Namespace, manager: JSONManager) -> int:
    q, m, n = int(_get(args, 'q')), int(_get(args, 'm')), int(_get(args, 'n'))
    dim = int(_get(args, 'd', 1))
    family = assouad_family(q, m, _get(args, 'h'), n, dim, _get(args, 'a', None), _get(args, 'A', None))

    # every neighbouring pair, each counted once
    deltas = []
    first_pair = None
    for i, signs in enumerate(family.signs):
        for coordinate in range(m):
            if signs[coordinate] == -1:
                flipped = list(signs)
                flipped[coordinate] = 1
                pair = hellinger_sq(family, i, family.index_of(flipped))
                first_pair = first_pair or pair
                deltas.append(abs(pair.closed_form - pair.brute_force))

    # members 0 and 1 differ in the last coordinate only
    power = int(_get(args, 'power', 2))
    neighbours = hellinger_sq(family, 0, 1)
    product = hellinger_product_bruteforce(family.members[0], family.members[1], power)
    report = {
        "family_size": family.size,
        "W": str(family.W),
        "flagged": family.flagged,
        "hellinger_closed_form": f"{first_pair.closed_form:.15g}",
        "hellinger_brute_force": f"{first_pair.brute_force:.15g}",
        "max_delta": f"{max(deltas):.3e}",
        "tensorized_delta": f"{abs(hellinger_tensorized(neighbours.brute_force, power) - product):.3e}"
    }
    if getattr(args, 'weight', None) is not None:
        w = parse_weight_arg(args.weight, dim)
        report["membership_condition"] = assouad_membership_condition(w, q, m)
        report["family_in_class"] = family_in_class(family, w)
    return _finish_report("ASSOUAD FAMILY CHECK", report, args, manager)


def cmd_circle(args: argparse.Namespace, manager: JSONManager) -> int:
    if getattr(args, 'set', None):
        s = manager.load_planar_set(args.set)
    else:
        s = disc(Fraction(1, 2), Fraction(1, 2), Fraction(1, 4))
    eps_values = _get(args, 'eps', ['0.01'])
    if not isinstance(eps_values, list):
        eps_values = [eps_values]

    chains: List[Dict[str, Any]] = []
    for eps in eps_values:
        chain = circle_chain(s, eps)
        chains.append({
            "eps": chain.eps,
            "eps0": chain.eps0,
            "level": chain.level,
            "covering": chain.covering,
            "intermediate_bound": chain.intermediate,
            "target_bound": chain.target,
            "error_upper": float(chain.error.upper),
            "holds": chain.holds
        })
    print("BOUNDARY APPROXIMATION")
    print("=" * 60)
    for entry in chains:
        print(f"EPS {entry['eps']}: J={entry['level']}, N={entry['covering']}, "
              f"ERROR <= {entry['error_upper']:.6g}, INTERMEDIATE {entry['intermediate_bound']:.6g}, "
              f"TARGET {entry['target_bound']:.6g}, HOLDS {entry['holds']}")
    if args.out:
        manager.save_report({"chains": chains}, args.out)
    return 0


def cmd_cantor(args: argparse.Namespace, manager: JSONManager) -> int:
    k = int(_get(args, 'k', 50))
    k0 = int(_get(args, 'k0', 10))
    measures = [fat_cantor_measure(step) for step in range(1, k + 1)]
    floor = fat_cantor_certified_floor(k0)
    report = {
        "measure_1": str(measures[0]) if measures else None,
        "measure_2": str(measures[1]) if k >= 2 else None,
        "final_measure": f"{float(measures[-1]):.12g}" if measures else None,
        "strictly_decreasing": all(later < earlier for earlier, later in zip(measures, measures[1:])),
        "certified_floor": f"{floor:.12g}",
        "above_floor": all(float(value) >= floor for value in measures),
        "limit": f"{fat_cantor_limit():.12g}"
    }
    return _finish_report("FAT CANTOR SET", report, args, manager)


def cmd_shatter(args: argparse.Namespace, manager: JSONManager) -> int:
    m = int(_get(args, 'm', 10))
    dim = int(_get(args, 'd', 1))
    witness = shatter_witness(m, dim)
    report = {
        "points": m,
        "dimension": dim,
        "labelings": 1 << m,
        "realized": witness.realized,
        "members": witness.members,
        "shattered": witness.all_realized
    }
    return _finish_report("SHATTERING WITNESS", report, args, manager)


def cmd_bounds(args: argparse.Namespace, manager: JSONManager) -> int:
    dim = int(_get(args, 'd', 1))
    w = parse_weight_arg(_get(args, 'weight'), dim)
    n = int(_get(args, 'n'))
    h, a, A = (to_fraction(_get(args, name, default)) for name, default in
               (('h', _REQUIRED), ('a', 1), ('A', 1)))
    level = select_j(n, a, dim)
    eps = bound_epsilon_for_level(w, level, A)
    bias, variance = bias_variance(eps, n, a, A, h, dim, level)
    lower, upper = tail_bounds(w, 0)

    report = {
        "class": str(w),
        "tail_0": f"[{float(lower):.12g}, {float(upper):.12g}]",
        "nontrivial": is_nontrivial(w),
        "J_n": level,
        "eps": f"{float(eps):.12g}",
        "approximation": f"{bias:.12g}",
        "estimation": f"{variance:.12g}",
        "upper_bound": f"{theoretical_bound(eps, n, a, A, h, dim, level):.12g}",
        "assouad_lower_bound": f"{assouad_lower_bound(w, n, h):.12g}",
        "unrestricted_floor": f"{dgl_lower_bound():.12g}"
    }
    if w.kind == 'truncated':
        report["rate_constant"] = f"{truncated_rate_constant(w.K, dim, h, a, A):.12g}"
    elif w.kind == 'exponential':
        report["rate_constant"] = f"{exponential_rate_constant(w.alpha, dim, h, a, A):.12g}"
    return _finish_report("RISK BOUNDS", report, args, manager)


# Parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='base seed (default from SPARSE_DYADIC_SEED)')
    common.add_argument('--out', help='output path; standard output when omitted')
    common.add_argument('--config', help='JSON file supplying option values')

    parser = argparse.ArgumentParser(prog='sparse-dyadic',
                                     description='Sparse dyadic classification experiments')
    commands = parser.add_subparsers(dest='command', required=True)

    gen_rule = commands.add_parser('gen-rule', parents=[common], help='sample a rule from a class')
    gen_rule.add_argument('--weight', help='minimal | truncated:K | exponential:alpha | JSON spec')
    gen_rule.add_argument('--d', type=int)
    gen_rule.add_argument('--depth', type=int)
    gen_rule.add_argument('--expand', type=float)
    gen_rule.set_defaults(handler=cmd_gen_rule)

    gen_data = commands.add_parser('gen-data', parents=[common], help='draw a labeled dataset')
    gen_data.add_argument('--dist', help='distribution document to sample from')
    gen_data.add_argument('--rule', help='Bayes rule document (when --dist is not given)')
    gen_data.add_argument('--h')
    gen_data.add_argument('--a')
    gen_data.add_argument('--A')
    gen_data.add_argument('--density', help="'uniform', a number or a level table")
    gen_data.add_argument('--margin', help='margin profile; defaults to h')
    gen_data.add_argument('--n', type=int)
    gen_data.add_argument('--dist-out', help='also write the distribution document here')
    gen_data.set_defaults(handler=cmd_gen_data)

    fit_parser = commands.add_parser('fit', parents=[common], help='fit the plug-in rule')
    fit_parser.add_argument('--data')
    fit_parser.add_argument('--level', type=int, help='J; chosen from n when omitted')
    fit_parser.add_argument('--a')
    fit_parser.add_argument('--counts', help='write the per-cell counts CSV here')
    fit_parser.set_defaults(handler=cmd_fit)

    risk_parser = commands.add_parser('risk', parents=[common], help='exact risks of a rule')
    risk_parser.add_argument('--dist')
    risk_parser.add_argument('--rule')
    risk_parser.set_defaults(handler=cmd_risk)

    approx = commands.add_parser('approx', parents=[common], help='dyadic approximation f_eps')
    approx.add_argument('--dist')
    approx.add_argument('--weight')
    approx.add_argument('--eps')
    approx.set_defaults(handler=cmd_approx)

    rates = commands.add_parser('rates', parents=[common], help='Monte-Carlo rate sweep')
    rates.add_argument('--trials', type=int)
    rates.add_argument('--parallelism', type=int)
    rates.set_defaults(handler=cmd_rates)

    assouad = commands.add_parser('assouad-check', parents=[common], help='Assouad family diagnostics')
    assouad.add_argument('--q', type=int)
    assouad.add_argument('--m', type=int)
    assouad.add_argument('--h')
    assouad.add_argument('--n', type=int)
    assouad.add_argument('--d', type=int)
    assouad.add_argument('--a')
    assouad.add_argument('--A')
    assouad.add_argument('--power', type=int, help='sample size for the product check (<= 5)')
    assouad.add_argument('--weight', help='also test membership in this class')
    assouad.set_defaults(handler=cmd_assouad_check)

    circle = commands.add_parser('circle', parents=[common], help='boundary approximation chain')
    circle.add_argument('--set', help='planar set document; disc r=1/4 at the centre by default')
    circle.add_argument('--eps', nargs='+')
    circle.set_defaults(handler=cmd_circle)

    cantor = commands.add_parser('cantor', parents=[common], help='fat Cantor measures')
    cantor.add_argument('--k', type=int)
    cantor.add_argument('--k0', type=int)
    cantor.set_defaults(handler=cmd_cantor)

    shatter = commands.add_parser('shatter', parents=[common], help='minimal-class shattering witness')
    shatter.add_argument('--m', type=int)
    shatter.add_argument('--d', type=int)
    shatter.set_defaults(handler=cmd_shatter)

    bounds = commands.add_parser('bounds', parents=[common], help='upper and lower risk bounds')
    bounds.add_argument('--weight')
    bounds.add_argument('--d', type=int)
    bounds.add_argument('--h')
    bounds.add_argument('--a')
    bounds.add_argument('--A')
    bounds.add_argument('--n', type=int)
    bounds.set_defaults(handler=cmd_bounds)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; 0 on success, 2 on rejected input, 1 on internal failure"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        manager = JSONManager(config)
        if args.config and args.command != 'rates':
            _apply_config_file(args, manager.load_config(args.config))
        return args.handler(args, manager)
    except (SparseDyadicError, FileNotFoundError) as e:
        print(f"VALIDATION ERROR: {e}", file=sys.stderr)
        logger.error(f"{args.command} rejected its input: {e}")
        return 2
    except Exception as e:
        print(f"EXECUTION ERROR: {e}", file=sys.stderr)
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 1
