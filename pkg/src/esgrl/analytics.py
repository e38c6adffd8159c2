"""Risk/performance statistics and the classical comparison portfolios."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EpisodeResult, esg_score, index_esg, portfolio_return
from .marketdata import ESG_FIELDS, AlignedDataset

PERIODS_PER_YEAR = 252
VAR_CUTOFF = 0.05

METRIC_NAMES = (
    "annual_return", "cumulative_return", "annual_volatility", "sharpe", "calmar",
    "omega", "sortino", "stability", "max_drawdown", "daily_var",
)


@dataclass(frozen=True)
class Degenerate:
    """A metric that is undefined for the given series (e.g. zero volatility)."""

    reason: str

    def __repr__(self) -> str:
        return f"Degenerate({self.reason!r})"


Value = float | Degenerate


@dataclass(frozen=True)
class MetricsReport:
    annual_return: Value
    cumulative_return: Value
    annual_volatility: Value
    sharpe: Value
    calmar: Value
    omega: Value
    sortino: Value
    stability: Value
    max_drawdown: Value
    daily_var: Value

    @property
    def degenerate(self) -> list[str]:
        return [n for n in METRIC_NAMES if isinstance(getattr(self, n), Degenerate)]

    def value(self, name: str) -> float | None:
        v = getattr(self, name)
        return None if isinstance(v, Degenerate) else v

    def to_dict(self) -> dict:
        out = {n: self.value(n) for n in METRIC_NAMES}
        out["degenerate"] = self.degenerate
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        bad = set(d.get("degenerate", []))
        return cls(**{n: Degenerate("reloaded") if n in bad or d.get(n) is None else float(d[n])
                      for n in METRIC_NAMES})


def max_drawdown(returns) -> float:
    """Most negative ``equity / running_peak - 1`` with the curve starting at 1."""
    equity = np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])
    peak = np.maximum.accumulate(equity)
    return float(np.min(equity / peak - 1.0))


def stability(returns) -> Value:
    y = np.cumsum(np.log1p(np.asarray(returns, dtype=float)))
    t = np.arange(len(y), dtype=float)
    sy = np.sum((y - y.mean()) ** 2)
    if sy == 0.0:
        return Degenerate("flat cumulative log-equity")
    st = np.sum((t - t.mean()) ** 2)
    sty = np.sum((t - t.mean()) * (y - y.mean()))
    return float(min(1.0, sty * sty / (st * sy)))


def value_at_risk(returns, cutoff: float = VAR_CUTOFF, parametric: bool = False) -> float:
    r = np.asarray(returns, dtype=float)
    if parametric:
        from scipy.stats import norm

        return float(r.mean() + norm.ppf(cutoff) * r.std(ddof=1))
    return float(np.percentile(r, 100.0 * cutoff, method="linear"))


def compute_metrics(returns, periods_per_year: int = PERIODS_PER_YEAR,
                    parametric_var: bool = False) -> MetricsReport:
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("need at least two returns")
    if not np.all(np.isfinite(r)) or np.any(r <= -1.0):
        raise ValueError("returns must be finite and greater than -1")

    n = len(r)
    ann = math.sqrt(periods_per_year)
    cumulative = float(np.prod(1.0 + r) - 1.0)
    annual_return = float((1.0 + cumulative) ** (periods_per_year / n) - 1.0)
    mean = float(r.mean())
    # identical values have zero spread; std() can leave ~1e-19 of rounding noise
    sd = 0.0 if np.all(r == r[0]) else float(r.std(ddof=1))
    downside = math.sqrt(float(np.sum(np.minimum(r, 0.0) ** 2)) / n)
    mdd = max_drawdown(r)
    gains = float(np.sum(np.maximum(r, 0.0)))
    losses = float(np.sum(np.maximum(-r, 0.0)))

    return MetricsReport(
        annual_return=annual_return,
        cumulative_return=cumulative,
        annual_volatility=sd * ann,
        sharpe=mean / sd * ann if sd > 0 else Degenerate("zero volatility"),
        calmar=annual_return / abs(mdd) if mdd < 0 else Degenerate("zero drawdown"),
        omega=gains / losses if losses > 0 else Degenerate("no losses"),
        sortino=mean / downside * ann if downside > 0 else Degenerate("no downside"),
        stability=stability(r),
        max_drawdown=mdd,
        daily_var=value_at_risk(r, parametric=parametric_var),
    )


def write_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")


def metrics_csv_row(report: MetricsReport) -> list[str]:
    return ["" if report.value(n) is None else repr(report.value(n)) for n in METRIC_NAMES]


# --------------------------------------------------------------------------
# min-variance
# --------------------------------------------------------------------------

class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def min_variance_from_cov(cov, ridge: float = 1e-10, tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """Long-only minimum-variance weights by accelerated projected gradient.

    ``ridge`` is relative to the mean variance and only guards singular
    covariances. Stops when a full gradient-projection step moves the weights
    by less than ``tol``.
    """
    cov = np.asarray(cov, dtype=float)
    A = cov.shape[0]
    if cov.shape != (A, A) or A < 1:
        raise ValueError("covariance must be a square matrix")
    if A == 1:
        return np.ones(1)
    q = 0.5 * (cov + cov.T)
    if not np.any(q):
        return np.full(A, 1.0 / A)
    q = q + ridge * max(float(np.trace(q)) / A, 1e-300) * np.eye(A)
    lip = 2.0 * float(np.linalg.eigvalsh(q)[-1])
    step = 1.0 / lip
    w = np.full(A, 1.0 / A)
    y, t = w.copy(), 1.0
    residual = math.inf
    for _ in range(max_iter):
        w_next = project_simplex(y - step * 2.0 * (q @ y))
        if float((y - w_next) @ (w_next - w)) > 0.0:
            # momentum points uphill: restart from a plain projected step
            t = 1.0
            w_next = project_simplex(w - step * 2.0 * (q @ w))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        # gradient mapping at the new iterate measures distance to optimality
        g = project_simplex(w_next - step * 2.0 * (q @ w_next))
        residual = float(np.linalg.norm(g - w_next))
        w, t = w_next, t_next
        if residual <= tol:
            return w
    raise ConvergenceError("min-variance solver did not converge", residual)


def min_variance_weights(return_window, long_only: bool = True, **kw) -> np.ndarray:
    r = np.asarray(return_window, dtype=float)
    if r.ndim != 2 or r.shape[0] < 2 or r.shape[1] < 1:
        raise ValueError("need a (T>=2, A>=1) return matrix")
    if not long_only:
        raise NotImplementedError("only the long-only portfolio is supported")
    return min_variance_from_cov(np.cov(r, rowvar=False).reshape(r.shape[1], r.shape[1]), **kw)


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "stratified"
    lookback: int = 60
    rebalance: int = 21

    def __post_init__(self):
        if self.kind not in ("stratified", "min_variance"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.lookback < 2 or self.rebalance < 1:
            raise ValueError("lookback must be >= 2 and rebalance >= 1")

    @property
    def name(self) -> str:
        return self.kind if self.kind == "stratified" else f"min_variance_{self.lookback}_{self.rebalance}"


def run_baseline(trade: AlignedDataset, spec: BaselineSpec, history: AlignedDataset | None = None,
                 transaction_cost: float = 0.0, esg_field: str = "mean") -> EpisodeResult:
    """Replay a rule-based portfolio over ``trade`` with the environment's accounting.

    Step ``k`` holds the weights chosen on day ``k`` from day ``k`` to ``k+1``.
    Min-variance weights use the ``lookback`` daily returns ending on the
    decision day, reaching back into ``history`` when needed.
    """
    closes = trade.closes
    A = trade.n_assets
    n_hist = 0
    if history is not None:
        all_closes = np.vstack([history.closes, closes])
        n_hist = len(history)
    else:
        all_closes = closes
    scores = trade.esg[:, :, ESG_FIELDS.index(esg_field)]
    if len(trade) < 2:
        raise ValueError("trade dataset needs at least two days")
    if spec.kind == "min_variance" and n_hist < spec.lookback:
        raise ValueError(f"min_variance needs {spec.lookback} days of history, got {n_hist}")

    prev_w = np.full(A, 1.0 / A)
    w = prev_w
    rows = []
    for k in range(len(trade) - 1):
        if spec.kind == "stratified":
            w = np.full(A, 1.0 / A)
        elif k % spec.rebalance == 0:
            end = n_hist + k + 1
            window = all_closes[end - spec.lookback - 1:end]
            w = min_variance_weights(window[1:] / window[:-1] - 1.0)
        r = portfolio_return(w, closes[k + 1], closes[k])
        turnover = float(np.abs(w - prev_w).sum())
        cost = transaction_cost * turnover
        phi = esg_score(w, scores[k + 1])
        psi = index_esg(scores[k + 1])
        rows.append((str(trade.calendar[k + 1]), r, w, phi, psi, turnover, cost))
        prev_w = w

    raw = np.array([x[1] for x in rows])
    cost = np.array([x[6] for x in rows])
    return EpisodeResult(
        dates=[x[0] for x in rows],
        tickers=trade.tickers,
        raw_returns=raw,
        rewards=raw - cost,
        regulated_returns=raw.copy(),
        weights=np.array([x[2] for x in rows]),
        phi=np.array([x[3] for x in rows]),
        psi=np.array([x[4] for x in rows]),
        turnover=np.array([x[5] for x in rows]),
        cost=cost,
        values=np.cumprod(1.0 + raw - cost),
    )


def read_returns_csv(path) -> np.ndarray:
    """First numeric column named ``return``/``returns``/``raw_return``, else the last column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    col = next((header.index(c) for c in ("return", "returns", "raw_return", "daily_return") if c in header), None)
    body = rows[1:]
    if col is None:
        try:
            float(rows[0][-1])
            body = rows
        except ValueError:
            pass
        col = len(rows[0]) - 1
    return np.array([float(r[col]) for r in body if r])
