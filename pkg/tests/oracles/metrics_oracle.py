"""Reference values for the ten risk/performance metrics.

Standard library only (math, statistics, csv, json). Written against the
metric definitions, not against the package. Run it to regenerate the
committed oracle file:

    python tests/oracles/metrics_oracle.py tests/fixtures/returns10.csv tests/fixtures/returns10_oracle.json
"""
from __future__ import annotations

import csv
import json
import math
import statistics
import sys

PERIODS = 252


def percentile_linear(values, q):
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def metrics(r):
    n = len(r)
    growth = 1.0
    equity = [1.0]
    for x in r:
        growth *= 1.0 + x
        equity.append(growth)
    cumulative = growth - 1.0
    annual = (1.0 + cumulative) ** (PERIODS / n) - 1.0
    mean = sum(r) / n
    sd = statistics.stdev(r)
    downside = math.sqrt(sum(min(x, 0.0) ** 2 for x in r) / n)

    peak, mdd = equity[0], 0.0
    for e in equity:
        peak = max(peak, e)
        mdd = min(mdd, e / peak - 1.0)

    # R^2 of least squares line through cumulative log growth
    y, acc = [], 0.0
    for x in r:
        acc += math.log(1.0 + x)
        y.append(acc)
    t = list(range(n))
    tm, ym = sum(t) / n, sum(y) / n
    sxy = sum((a - tm) * (b - ym) for a, b in zip(t, y))
    sxx = sum((a - tm) ** 2 for a in t)
    syy = sum((b - ym) ** 2 for b in y)

    return {
        "annual_return": annual,
        "cumulative_return": cumulative,
        "annual_volatility": sd * math.sqrt(PERIODS),
        "sharpe": mean / sd * math.sqrt(PERIODS),
        "calmar": annual / abs(mdd),
        "omega": sum(x for x in r if x > 0) / -sum(x for x in r if x < 0),
        "sortino": mean / downside * math.sqrt(PERIODS),
        "stability": sxy * sxy / (sxx * syy),
        "max_drawdown": mdd,
        "daily_var": percentile_linear(r, 0.05),
    }


def read_returns(path):
    with open(path, newline="") as fh:
        return [float(row["return"]) for row in csv.DictReader(fh)]


if __name__ == "__main__":
    values = metrics(read_returns(sys.argv[1]))
    with open(sys.argv[2], "w") as fh:
        json.dump({k: repr(v) for k, v in values.items()}, fh, indent=2)
        fh.write("\n")
