import logging
import operator
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# Version of the summary.json layout written by the scenario runner.
SCHEMA_VERSION = 1

COMPARISONS = {
    '<=': operator.le,
    '>=': operator.ge,
    '<': operator.lt,
    '>': operator.gt,
    '==': operator.eq,
}


@dataclass(eq=False)
class RunReport:
    """
    Outcome of one scenario run: scalar metrics, tolerance checks, metric
    tables (pandas frames written as CSV) and text artifacts such as the
    mesh and coefficient files.
    """

    scenario: str
    seed: int
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    wall_clock: float = None

    def __str__(self):
        state = 'passed' if self.passed else f"failed ({', '.join(self.failures)})"
        return f"RunReport({self.scenario}, seed {self.seed}, {state})"

    @property
    def schema_version(self):
        return SCHEMA_VERSION

    @property
    def passed(self):
        return all(check['passed'] for check in self.checks)

    @property
    def failures(self):
        return [check['name'] for check in self.checks if not check['passed']]

    @property
    def table_names(self):
        return sorted(self.tables)

    def check(self, name, value, limit, comparison='<='):
        """Record ``value <comparison> limit`` as a named tolerance check."""
        passed = bool(COMPARISONS[comparison](value, limit))
        self.checks.append({
            'name': name,
            'value': value,
            'limit': limit,
            'comparison': comparison,
            'passed': passed,
        })
        if not passed:
            logger.warning("%s: check %s failed (%r %s %r)", self.scenario, name, value, comparison, limit)
        return passed
