"""Residence-time statistics over simulated paths, and bound comparisons.

Aggregates batch simulation outcomes into hitting-time estimates (mean,
hit probabilities per horizon, exponential-moment estimates) and compares
them against closed-form certificate bounds with a 3-standard-error
tolerance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .sde import STATUS_NAMES, SimulationResult

__all__ = [
    "ResidenceStats",
    "BoundReport",
    "aggregate",
    "make_bound_report",
    "compare_bounds",
    "chebyshev_mean_bound",
    "chebyshev_mgf_bound",
    "write_report_csv",
    "write_report_jsonl",
]

_CODE_BY_NAME = {name: code for code, name in STATUS_NAMES.items()}
_HIT = _CODE_BY_NAME["hit"]
_CENSORED = _CODE_BY_NAME["censored"]


def _normalize(outcomes):
    """Status-code and end-time arrays from a SimulationResult or a
    sequence of PathOutcome records."""
    if isinstance(outcomes, SimulationResult):
        return outcomes.status.astype(np.int64), np.asarray(outcomes.t_end, float)
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("need at least one path outcome")
    status = np.array([_CODE_BY_NAME[o.status] for o in outcomes], np.int64)
    t_end = np.array([o.t_end for o in outcomes], float)
    return status, t_end


@dataclass(frozen=True)
class ResidenceStats:
    """Aggregated hitting statistics for one batch of paths.

    ``mean_tau`` averages hit paths only; ``mean_tau_lower`` is a
    conservative lower bound averaging all paths with non-hitting paths
    folded in at their termination time.  Paths stopped by the safety step
    limit count as escaped (they neither hit nor ran to the horizon).
    With zero hits the hit-only fields hold 0.0 and ``mean_tau_defined``
    is False.  ``p_hit_by_T`` holds ``(T, p, binomial_se)`` triples;
    ``mgf`` holds ``(rate, estimate, se)`` triples over hit paths, flagged
    as a lower bound whenever censoring occurred.
    """

    n_paths: int
    n_hit: int
    n_censored: int
    n_escaped: int
    mean_tau: float
    mean_tau_defined: bool
    se_mean: float
    mean_tau_lower: float
    se_mean_lower: float
    p_hit_by_T: tuple
    mgf: tuple
    mgf_is_lower_bound: bool

    def __post_init__(self):
        if self.n_hit + self.n_censored + self.n_escaped != self.n_paths:
            raise ValueError("status counts do not add up to n_paths")
        for _, p, _ in self.p_hit_by_T:
            if not 0.0 <= p <= 1.0:
                raise ValueError("hit probability outside [0, 1]")

    def p_hit(self, T):
        """(probability, se) of hitting by horizon ``T``."""
        for T_i, p, se in self.p_hit_by_T:
            if T_i == T:
                return p, se
        raise KeyError(f"horizon {T!r} was not requested at aggregation")

    def mgf_at(self, rate):
        """(estimate, se) of E[exp(rate * tau)] over hit paths."""
        for lam, est, se in self.mgf:
            if lam == rate:
                return est, se
        raise KeyError(f"rate {rate!r} was not requested at aggregation")


def aggregate(outcomes, T_list=(), lambda_list=()) -> ResidenceStats:
    """Reduce path outcomes to residence-time statistics.

    Parameters
    ----------
    outcomes : SimulationResult or iterable of PathOutcome
    T_list : sequence of float
        Horizons for hit-probability estimates.
    lambda_list : sequence of float
        Rates for exponential-moment estimates E[exp(rate * tau)].
    """
    status, t_end = _normalize(outcomes)
    n = status.size
    if n == 0:
        raise ValueError("need at least one path outcome")
    hit = status == _HIT
    n_hit = int(np.count_nonzero(hit))
    n_cens = int(np.count_nonzero(status == _CENSORED))
    n_esc = n - n_hit - n_cens

    taus = t_end[hit]
    if n_hit:
        mean_tau = float(np.mean(taus))
        se_mean = float(np.std(taus, ddof=1) / math.sqrt(n_hit)) if n_hit > 1 else 0.0
    else:
        mean_tau, se_mean = 0.0, 0.0
    mean_lower = float(np.mean(t_end))
    se_lower = float(np.std(t_end, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    p_rows = []
    for T in T_list:
        k = int(np.count_nonzero(hit & (t_end <= T)))
        p = k / n
        p_rows.append((float(T), p, math.sqrt(p * (1.0 - p) / n)))

    mgf_rows = []
    for lam in lambda_list:
        if n_hit:
            with np.errstate(over="ignore"):
                w = np.exp(float(lam) * taus)
            est = float(np.mean(w))
            se = float(np.std(w, ddof=1) / math.sqrt(n_hit)) if n_hit > 1 else 0.0
        else:
            est, se = 0.0, 0.0
        mgf_rows.append((float(lam), est, se))

    return ResidenceStats(
        n_paths=n,
        n_hit=n_hit,
        n_censored=n_cens,
        n_escaped=n_esc,
        mean_tau=mean_tau,
        mean_tau_defined=n_hit > 0,
        se_mean=se_mean,
        mean_tau_lower=mean_lower,
        se_mean_lower=se_lower,
        p_hit_by_T=tuple(p_rows),
        mgf=tuple(mgf_rows),
        mgf_is_lower_bound=n_cens > 0,
    )


@dataclass(frozen=True)
class BoundReport:
    """One empirical-versus-bound comparison."""

    quantity: str
    empirical: float
    se: float
    bound: float
    bound_kind: str
    satisfied: bool
    slack: float


def make_bound_report(quantity, empirical, se, bound, bound_kind) -> BoundReport:
    """Build a report; satisfied means empirical <= bound + 3 se."""
    return BoundReport(
        quantity=quantity,
        empirical=float(empirical),
        se=float(se),
        bound=float(bound),
        bound_kind=bound_kind,
        satisfied=bool(empirical <= bound + 3.0 * se),
        slack=float(bound - empirical),
    )


def _lookup_quantity(stats: ResidenceStats, quantity: str):
    if quantity == "mean_tau":
        return stats.mean_tau, stats.se_mean
    if quantity == "mean_tau_lower":
        return stats.mean_tau_lower, stats.se_mean_lower
    if quantity.startswith("mgf:"):
        return stats.mgf_at(float(quantity.split(":", 1)[1]))
    if quantity.startswith("p_hit:"):
        return stats.p_hit(float(quantity.split(":", 1)[1]))
    if quantity.startswith("p_exceed:"):
        p, se = stats.p_hit(float(quantity.split(":", 1)[1]))
        return 1.0 - p, se
    raise ValueError(f"unknown quantity {quantity!r}")


def compare_bounds(stats: ResidenceStats, bounds) -> list:
    """Compare selected statistics against upper bounds.

    ``bounds`` is a sequence of ``(quantity, bound_value, bound_kind)``
    triples.  Quantities: "mean_tau", "mean_tau_lower", "mgf:<rate>",
    "p_hit:<T>", "p_exceed:<T>" (complement of the hit probability, for
    tail bounds).  Each comparison is one-sided with 3-SE tolerance.
    """
    reports = []
    for quantity, value, kind in bounds:
        emp, se = _lookup_quantity(stats, quantity)
        reports.append(make_bound_report(quantity, emp, se, value, kind))
    return reports


def chebyshev_mean_bound(mean_bound: float, T: float) -> float:
    """Tail bound P(tau > T) <= mean_bound / T, clamped to 1."""
    if mean_bound < 0:
        raise ValueError("mean_bound must be nonnegative")
    if T <= 0:
        raise ValueError("T must be positive")
    return min(1.0, mean_bound / T)


def chebyshev_mgf_bound(V0: float, inf_V_boundary: float, rate: float,
                        T: float) -> float:
    """Tail bound P(tau > T) <= V0 / (exp(rate T) inf_V), clamped to 1."""
    if inf_V_boundary <= 0:
        raise ValueError("boundary infimum of V must be positive")
    if V0 < 0:
        raise ValueError("V0 must be nonnegative")
    if rate <= 0 or T <= 0:
        raise ValueError("rate and T must be positive")
    return min(1.0, V0 * math.exp(-rate * T) / inf_V_boundary)


_REPORT_FIELDS = ("quantity", "estimate", "se", "bound", "bound_kind",
                  "satisfied")


def _report_row(r: BoundReport):
    return {
        "quantity": r.quantity,
        "estimate": r.empirical,
        "se": r.se,
        "bound": r.bound,
        "bound_kind": r.bound_kind,
        "satisfied": r.satisfied,
    }


def write_report_csv(path, reports):
    """Write comparisons as CSV with a fixed header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_REPORT_FIELDS)
        for r in reports:
            row = _report_row(r)
            w.writerow([row["quantity"], f"{row['estimate']:.10g}",
                        f"{row['se']:.10g}", f"{row['bound']:.10g}",
                        row["bound_kind"],
                        "true" if row["satisfied"] else "false"])


def write_report_jsonl(path, reports):
    """Write comparisons as JSON lines with the same fields as the CSV."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(_report_row(r)) + "\n")
