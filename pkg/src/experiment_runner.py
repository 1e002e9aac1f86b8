"""
Monte-Carlo rate sweeps for the plug-in estimator

For every trial a Bayes rule f* is drawn from the class, a distribution with
that Bayes rule is built, and for every n of the grid a dataset is drawn, the
plug-in rule at level J_n is fitted and its excess risk is computed exactly.
Trials run concurrently; every seed depends only on (base seed, n, trial), so
the table does not depend on the degree of parallelism.
"""

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from config import config
from dyadic_index import CellIndex, cells_at_level
from errors import ConfigurationError, DocumentError, ParameterRangeError, ValidationError
from plugin_estimator import bound_epsilon_for_level, fit, select_j, theoretical_bound
from sparse_class import WeightFunction, is_l1_ball, parse_weight, sample_rule, to_fraction, weight_to_dict
from synthetic_dist import PiecewiseDistribution, excess_risk, make_distribution, sample

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

# Either a constant or a complete single-level table
TableSpec = Union[Fraction, Dict[CellIndex, Fraction]]


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(base: int, n: int, trial: int) -> int:
    """Stable 64-bit seed for one (n, trial) cell of a sweep"""
    state = _splitmix64(base & MASK64)
    state = _splitmix64(state ^ (n & MASK64))
    return _splitmix64(state ^ (trial & MASK64))


def parse_table_spec(spec: Any, dim: int, default: Fraction) -> TableSpec:
    """'uniform'/None -> default, a number -> constant, {"level": R, "values": [...]} -> table"""
    if spec is None or spec == 'uniform':
        return default
    if isinstance(spec, dict):
        if set(spec) != {"level", "values"}:
            raise DocumentError(f"Table spec needs exactly 'level' and 'values', got {sorted(spec)}")
        level = spec["level"]
        values = spec["values"]
        if isinstance(level, bool) or not isinstance(level, int) or level < 0:
            raise DocumentError(f"Table level must be a non-negative integer, got {level!r}")
        cells = list(cells_at_level(level, dim))
        if not isinstance(values, list) or len(values) != len(cells):
            raise DocumentError(f"Level-{level} table needs {len(cells)} values")
        return {cell: to_fraction(value) for cell, value in zip(cells, values)}
    return to_fraction(spec)


def _table_to_document(table: TableSpec) -> Any:
    if isinstance(table, dict):
        cells = sorted(table)
        return {"level": cells[0].level, "values": [str(table[cell]) for cell in cells]}
    return str(table)


@dataclass
class ExperimentConfig:
    """One rate sweep; defaults come from the environment config"""
    weight: WeightFunction
    dim: int
    h: Fraction
    a: Fraction = Fraction(1)
    A: Fraction = Fraction(1)
    density: TableSpec = Fraction(1)
    margin: Optional[TableSpec] = None
    n_grid: List[int] = field(default_factory=list)
    trials: int = field(default_factory=lambda: config.TRIALS)
    base_seed: int = field(default_factory=lambda: config.DEFAULT_SEED)
    output: Optional[str] = None
    rule_depth: int = field(default_factory=lambda: config.RULE_DEPTH)
    expand: float = 1.0
    parallelism: int = field(default_factory=lambda: config.PARALLELISM)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.weight.dim != self.dim:
            raise ConfigurationError(
                f"Weight is {self.weight.dim}-dimensional, experiment is {self.dim}-dimensional")
        if not is_l1_ball(self.weight):
            raise ConfigurationError(f"{self.weight} is not an L1-ball of rules")
        if not 0 < self.h <= 1:
            raise ConfigurationError(f"h must lie in (0, 1], got {self.h}")
        if not 0 < self.a <= 1 <= self.A:
            raise ConfigurationError(f"Need 0 < a <= 1 <= A, got a={self.a}, A={self.A}")
        if not self.n_grid:
            raise ConfigurationError("n_grid is empty")
        if any(isinstance(n, bool) or not isinstance(n, int) for n in self.n_grid):
            raise ConfigurationError(f"n_grid must hold integers, got {self.n_grid}")
        if self.n_grid[0] < 3:
            raise ConfigurationError(f"Sample sizes must be >= 3, got {self.n_grid[0]}")
        if any(later <= earlier for earlier, later in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigurationError(f"n_grid must be strictly increasing, got {self.n_grid}")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.rule_depth < 1:
            raise ConfigurationError(f"rule_depth must be >= 1, got {self.rule_depth}")
        if not 0 <= self.expand <= 1:
            raise ConfigurationError(f"expand must lie in [0, 1], got {self.expand}")
        if self.parallelism < 1:
            raise ConfigurationError(f"parallelism must be >= 1, got {self.parallelism}")

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> 'ExperimentConfig':
        """Build from the JSON form used by `rates --config`"""
        known = {"weight", "d", "h", "a", "A", "density", "margin", "n_grid", "trials",
                 "seed", "output", "rule_depth", "expand", "parallelism"}
        unknown = set(document) - known
        if unknown:
            raise ConfigurationError(f"Unknown experiment fields {sorted(unknown)}")
        for name in ("weight", "d", "h", "n_grid"):
            if name not in document:
                raise ConfigurationError(f"Experiment config is missing '{name}'")
        try:
            dim = int(document["d"])
            h = to_fraction(document["h"])
            return cls(
                weight=parse_weight(document["weight"], dim),
                dim=dim,
                h=h,
                a=to_fraction(document.get("a", 1)),
                A=to_fraction(document.get("A", 1)),
                density=parse_table_spec(document.get("density"), dim, Fraction(1)),
                margin=parse_table_spec(document.get("margin"), dim, h),
                n_grid=list(document["n_grid"]),
                trials=int(document.get("trials", config.TRIALS)),
                base_seed=int(document.get("seed", config.DEFAULT_SEED)),
                output=document.get("output"),
                rule_depth=int(document.get("rule_depth", config.RULE_DEPTH)),
                expand=float(document.get("expand", 1.0)),
                parallelism=int(document.get("parallelism", config.PARALLELISM)))
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid experiment config: {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weight": weight_to_dict(self.weight),
            "d": self.dim,
            "h": str(self.h),
            "a": str(self.a),
            "A": str(self.A),
            "density": _table_to_document(self.density),
            "margin": None if self.margin is None else _table_to_document(self.margin),
            "n_grid": list(self.n_grid),
            "trials": self.trials,
            "seed": self.base_seed,
            "output": self.output,
            "rule_depth": self.rule_depth,
            "expand": self.expand,
            "parallelism": self.parallelism
        }


@dataclass(frozen=True)
class RateRow:
    n: int
    J_n: int
    mean_excess: float
    std_err: float
    bound: float
    ratio: float

    def as_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "J_n": self.J_n, "mean_excess": self.mean_excess,
                "std_err": self.std_err, "bound": self.bound, "ratio": self.ratio}


def build_distributions(experiment: ExperimentConfig) -> List[PiecewiseDistribution]:
    """One distribution per trial, its Bayes rule drawn from the class"""
    margin = experiment.h if experiment.margin is None else experiment.margin
    distributions = []
    for trial in range(experiment.trials):
        fstar = sample_rule(experiment.weight, experiment.rule_depth,
                            mix_seed(experiment.base_seed, 0, trial), experiment.expand)
        distributions.append(make_distribution(fstar, margin, experiment.density, experiment.h,
                                               experiment.a, experiment.A))
    return distributions


def trial_excess(dist: PiecewiseDistribution, n: int, level: int, seed: int) -> Fraction:
    data = sample(dist, n, seed)
    return excess_risk(dist, fit(data, level).to_rule())


async def _gather_trials(jobs: Sequence[tuple], parallelism: int) -> List[Fraction]:
    """Run trial jobs batch by batch; results come back in job order"""
    loop = asyncio.get_running_loop()
    results: List[Fraction] = []
    batch_size = config.BATCH_SIZE
    total_batches = (len(jobs) + batch_size - 1) // batch_size

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        for i in range(0, len(jobs), batch_size):
            batch = jobs[i:i + batch_size]
            logger.debug(f"Running trial batch {i // batch_size + 1}/{total_batches} ({len(batch)} trials)")
            tasks = [loop.run_in_executor(pool, trial_excess, *job) for job in batch]
            batch_results = await asyncio.gather(*tasks, return_exceptions=True)

            for job, result in zip(batch, batch_results):
                if isinstance(result, Exception):
                    logger.error(f"Trial failed for n={job[1]}, seed={job[3]}: {result}")
                    raise result
                results.append(result)
    return results


def summarize(n: int, level: int, values: Sequence[Fraction], experiment: ExperimentConfig) -> RateRow:
    trials = len(values)
    mean = float(sum(values, Fraction(0)) / trials)
    std_err = float(np.std([float(v) for v in values], ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    eps = bound_epsilon_for_level(experiment.weight, level, experiment.A)
    bound = theoretical_bound(eps, n, experiment.a, experiment.A, experiment.h, experiment.dim, level)
    return RateRow(n, level, mean, std_err, bound, mean * n / math.log(n))


def run_rates(experiment: ExperimentConfig) -> List[RateRow]:
    """Mean exact excess risk of the plug-in rule at J_n for every n of the grid"""
    logger.info(f"Rate sweep for {experiment.weight}: n={experiment.n_grid}, "
                f"{experiment.trials} trials, parallelism {experiment.parallelism}")
    distributions = build_distributions(experiment)

    levels = {n: select_j(n, experiment.a, experiment.dim) for n in experiment.n_grid}
    jobs = [(dist, n, levels[n], mix_seed(experiment.base_seed, n, trial))
            for n in experiment.n_grid
            for trial, dist in enumerate(distributions)]
    results = asyncio.run(_gather_trials(jobs, experiment.parallelism))

    rows = []
    for position, n in enumerate(experiment.n_grid):
        values = results[position * experiment.trials:(position + 1) * experiment.trials]
        row = summarize(n, levels[n], values, experiment)
        logger.info(f"n={n}: J_n={row.J_n}, mean excess {row.mean_excess:.6g} "
                    f"+/- {row.std_err:.3g}, bound {row.bound:.6g}")
        rows.append(row)
    return rows


def rate_slope(rows: Sequence[RateRow]) -> float:
    """Least-squares slope of ln(mean_excess) against ln(ln n / n)"""
    if len(rows) < 2:
        raise ParameterRangeError("A slope needs at least two grid points")
    xs = np.array([math.log(math.log(row.n) / row.n) for row in rows])
    ys = np.array([math.log(row.mean_excess) for row in rows])
    return float(np.polyfit(xs, ys, 1)[0])


def ratio_spread(rows: Sequence[RateRow]) -> float:
    """max / min of the ratio column"""
    ratios = [row.ratio for row in rows]
    if min(ratios) <= 0:
        return math.inf
    return max(ratios) / min(ratios)
