"""Portfolio-allocation environment with an ESG grant/tax regulator.

Each step the agent proposes one real number per asset; the numbers become
long-only weights held from day ``t-1`` to day ``t``. The training signal is
the weighted simple return of the portfolio, optionally reshaped by the
regulator: portfolios whose weighted ESG score beats the equal-weight index
earn a grant proportional to ``|r|``, and laggards pay a tax.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .indicators import FeaturePanel
from .marketdata import ESG_FIELDS, ESG_MAX, AlignedDataset


class EnvError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# reward algebra
# --------------------------------------------------------------------------

def action_to_weights(a) -> np.ndarray:
    """Clip to [-1, 1], shift by +1 and renormalize; all-zero mass -> equal weights."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("action must be a non-empty vector")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite action {a}")
    mass = np.clip(a, -1.0, 1.0) + 1.0
    total = mass.sum()
    if total <= 0.0:
        return np.full(a.size, 1.0 / a.size)
    return mass / total


def portfolio_return(w, closes_t, closes_prev) -> float:
    closes_t = np.asarray(closes_t, dtype=float)
    closes_prev = np.asarray(closes_prev, dtype=float)
    if np.any(closes_t <= 0) or np.any(closes_prev <= 0):
        raise ValueError("prices must be positive")
    return float(np.dot(w, closes_t / closes_prev - 1.0))


def esg_score(w, esg) -> float:
    """Portfolio ESG value: weight-averaged asset scores."""
    w = np.asarray(w, dtype=float)
    esg = np.asarray(esg, dtype=float)
    if w.shape != esg.shape:
        raise ValueError(f"weights {w.shape} and scores {esg.shape} differ in length")
    return float(np.dot(w, esg))


def index_esg(esg) -> float:
    """ESG value of the equal-weight index."""
    esg = np.asarray(esg, dtype=float)
    if esg.size == 0:
        raise ValueError("no ESG scores")
    return float(esg.sum() / esg.size)


def regulate(r: float, phi: float, psi: float, lam: float) -> float:
    """Linear grant/tax shaping of a raw return.

    ``phi > psi`` earns ``lam*|r|*(phi-psi)/(10-psi)``; ``phi < psi`` pays
    ``lam*|r|*(psi-phi)/psi``; equality leaves ``r`` untouched.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not (0.0 <= phi <= ESG_MAX and 0.0 <= psi <= ESG_MAX):
        raise ValueError(f"phi={phi}, psi={psi} outside [0, 10]")
    if phi > psi:
        assert ESG_MAX - psi > 0.0
        return r + lam * abs(r) * (phi - psi) / (ESG_MAX - psi)
    if phi < psi:
        assert psi > 0.0
        return r - lam * abs(r) * (psi - phi) / psi
    return r


def regulate_batch(r, phi, psi, lam) -> np.ndarray:
    """Elementwise :func:`regulate` over broadcastable arrays, bit-identical to the scalar form."""
    r, phi, psi, lam = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (r, phi, psi, lam)))
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    if np.any(~((0.0 <= phi) & (phi <= ESG_MAX) & (0.0 <= psi) & (psi <= ESG_MAX))):
        raise ValueError("phi or psi outside [0, 10]")
    out = r.copy()
    up, down = phi > psi, phi < psi
    out[up] = r[up] + lam[up] * np.abs(r[up]) * (phi[up] - psi[up]) / (ESG_MAX - psi[up])
    out[down] = r[down] - lam[down] * np.abs(r[down]) * (psi[down] - phi[down]) / psi[down]
    return out


SHAPERS: dict[str, Callable[[float, float, float, float], float]] = {"linear": regulate}


# --------------------------------------------------------------------------
# market view and configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvConfig:
    lam: float = 1.0
    regulate: bool = True
    esg_in_state: bool = False
    transaction_cost: float = 0.0
    include_weights_in_obs: bool = False
    normalize_obs: bool = True
    esg_field: str = "mean"
    shaping: str = "linear"
    regulation_affects_value: bool = False
    esg_max: float = ESG_MAX

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a finite value >= 0")
        if not 0.0 <= self.transaction_cost <= 0.1:
            raise ValueError("transaction_cost must lie in [0, 0.1]")
        if self.esg_max != ESG_MAX:
            raise ValueError("esg_max is fixed at 10.0")
        if self.esg_field not in ESG_FIELDS:
            raise ValueError(f"esg_field must be one of {ESG_FIELDS}")
        if self.shaping not in SHAPERS:
            raise ValueError(f"unknown shaping function {self.shaping!r}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Market:
    """The arrays an episode replays, already restricted to usable days.

    ``esg`` is ``None`` when no ESG data was loaded; only free-market
    configurations without ESG features can run on such a market.
    """

    dates: np.ndarray
    tickers: tuple[str, ...]
    ohlcv: np.ndarray
    features: np.ndarray
    esg: np.ndarray | None

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def closes(self) -> np.ndarray:
        return self.ohlcv[:, :, 3]

    def without_esg(self) -> "Market":
        return Market(self.dates, self.tickers, self.ohlcv, self.features, None)


def build_market(ds: AlignedDataset, panel: FeaturePanel) -> Market:
    """Join a dataset with features computed on a (possibly longer) calendar,
    dropping rows that fall inside the indicator warm-up."""
    if panel.tickers != ds.tickers:
        raise EnvError("feature panel and dataset tickers differ")
    pos = np.searchsorted(panel.calendar, ds.calendar)
    pos = np.clip(pos, 0, len(panel.calendar) - 1)
    if not np.array_equal(panel.calendar[pos], ds.calendar):
        raise EnvError("dataset days missing from feature panel")
    keep = pos >= panel.start
    return Market(
        ds.calendar[keep], ds.tickers, ds.ohlcv[keep], panel.values[pos[keep]], ds.esg[keep]
    )


def raw_observations(market: Market, cfg: EnvConfig) -> np.ndarray:
    """Per-day flat observation rows without normalization or weights."""
    parts = [market.ohlcv, market.features]
    if cfg.esg_in_state:
        if market.esg is None:
            raise EnvError("esg_in_state requires ESG data")
        parts.append(market.esg)
    block = np.concatenate(parts, axis=2)
    return block.reshape(len(market), -1)


@dataclass(frozen=True)
class ObsStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "ObsStats":
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, dim: int) -> "ObsStats":
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std


def observation_stats(train_market: Market, cfg: EnvConfig) -> ObsStats:
    rows = raw_observations(train_market, cfg)
    return ObsStats.fit(rows) if cfg.normalize_obs else ObsStats.identity(rows.shape[1])


@dataclass
class PortfolioState:
    day_index: int
    weights: np.ndarray
    portfolio_value: float = 1.0


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# environment
# --------------------------------------------------------------------------

class PortfolioEnv:
    """Deterministic replay of a market; one instance per thread."""

    def __init__(self, market: Market, cfg: EnvConfig, stats: ObsStats | None = None):
        if len(market) < 2:
            raise EnvError(f"market has {len(market)} usable days; need at least 2")
        if market.esg is None and (cfg.regulate or cfg.esg_in_state):
            raise EnvError("regulated or ESG-aware configurations need ESG data")
        self.market = market
        self.cfg = cfg
        raw = raw_observations(market, cfg)
        self.stats = stats if stats is not None else ObsStats.identity(raw.shape[1])
        if self.stats.mean.shape != (raw.shape[1],):
            raise EnvError("observation statistics do not match observation size")
        self._obs = self.stats.apply(raw)
        # phi/psi are tracked whenever scores exist; they only shape reward when regulating
        if market.esg is not None:
            self._scores = market.esg[:, :, ESG_FIELDS.index(cfg.esg_field)]
        else:
            self._scores = None
        self._shaper = SHAPERS[cfg.shaping]
        self.state: PortfolioState | None = None
        self.done = True

    @property
    def n_assets(self) -> int:
        return self.market.n_assets

    @property
    def obs_dim(self) -> int:
        return self._obs.shape[1] + (self.n_assets if self.cfg.include_weights_in_obs else 0)

    @property
    def n_steps(self) -> int:
        return len(self.market) - 1

    def fingerprint(self) -> str:
        return f"{self.cfg.fingerprint()}-{self.obs_dim}-{self.n_assets}"

    def _observe(self) -> np.ndarray:
        row = self._obs[self.state.day_index]
        if self.cfg.include_weights_in_obs:
            row = np.concatenate([row, self.state.weights])
        if not np.all(np.isfinite(row)):
            raise EnvError(f"non-finite observation on day {self.state.day_index}")
        return row.copy()

    def reset(self, seed: int | None = None) -> np.ndarray:
        # seed accepted for API symmetry; the replay itself is deterministic
        A = self.n_assets
        self.state = PortfolioState(0, np.full(A, 1.0 / A), 1.0)
        self.done = False
        return self._observe()

    def step(self, action) -> StepOutcome:
        if self.done or self.state is None:
            raise EnvError("step() called on a finished episode; call reset()")
        st = self.state
        w = action_to_weights(action)
        turnover = float(np.abs(w - st.weights).sum())
        cost = self.cfg.transaction_cost * turnover
        t = st.day_index + 1
        closes = self.market.closes
        r = portfolio_return(w, closes[t], closes[t - 1])

        if self._scores is not None:
            scores = self._scores[t]
            phi = esg_score(w, scores)
            psi = index_esg(scores)
            shaped = self._shaper(r, phi, psi, self.cfg.lam)
        else:
            phi = psi = math.nan
            shaped = r

        reward = (shaped if self.cfg.regulate else r) - cost
        growth = (shaped if self.cfg.regulate and self.cfg.regulation_affects_value else r) - cost
        st.portfolio_value *= 1.0 + growth
        st.weights = w
        st.day_index = t
        self.done = t >= len(self.market) - 1
        info = {
            "day": t,
            "date": str(self.market.dates[t]),
            "raw_return": r,
            "regulated_return": shaped,
            "phi": phi,
            "psi": psi,
            "turnover": turnover,
            "cost": cost,
            "value": st.portfolio_value,
            "weights": w,
        }
        return StepOutcome(self._observe(), reward, self.done, info)


# --------------------------------------------------------------------------
# episode records
# --------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    """Per-step trace of one evaluation run (step k covers day k -> k+1)."""

    dates: list[str]
    tickers: tuple[str, ...]
    raw_returns: np.ndarray
    rewards: np.ndarray
    regulated_returns: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    turnover: np.ndarray
    cost: np.ndarray
    values: np.ndarray

    @classmethod
    def from_infos(cls, tickers, rewards, infos) -> "EpisodeResult":
        col = lambda k: np.array([i[k] for i in infos], dtype=float)
        return cls(
            dates=[i["date"] for i in infos],
            tickers=tuple(tickers),
            raw_returns=col("raw_return"),
            rewards=np.asarray(rewards, dtype=float),
            regulated_returns=col("regulated_return"),
            weights=np.array([i["weights"] for i in infos]),
            phi=col("phi"),
            psi=col("psi"),
            turnover=col("turnover"),
            cost=col("cost"),
            values=col("value"),
        )

    @property
    def net_returns(self) -> np.ndarray:
        return self.raw_returns - self.cost

    def __len__(self) -> int:
        return len(self.dates)


def run_episode(env: PortfolioEnv, policy: Callable[[np.ndarray], np.ndarray]) -> EpisodeResult:
    obs = env.reset()
    rewards, infos = [], []
    while not env.done:
        out = env.step(policy(obs))
        rewards.append(out.reward)
        infos.append(out.info)
        obs = out.observation
    return EpisodeResult.from_infos(env.market.tickers, rewards, infos)


def write_trace_csv(res: EpisodeResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "date", "raw_return", "regulated_return", "phi", "psi", "turnover", "cost", "value"])
        for k in range(len(res)):
            w.writerow([
                k + 1, res.dates[k], repr(float(res.raw_returns[k])), repr(float(res.regulated_returns[k])),
                repr(float(res.phi[k])), repr(float(res.psi[k])), repr(float(res.turnover[k])),
                repr(float(res.cost[k])), repr(float(res.values[k])),
            ])


def write_weights_csv(res: EpisodeResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *res.tickers])
        for k in range(len(res)):
            w.writerow([res.dates[k], *(repr(float(x)) for x in res.weights[k])])


def read_episode(trace_path, weights_path) -> EpisodeResult:
    """Inverse of :func:`write_trace_csv` plus :func:`write_weights_csv`."""
    with open(trace_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(weights_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        tickers = tuple(next(reader)[1:])
        weights = np.array([[float(x) for x in r[1:]] for r in reader])
    col = lambda k: np.array([float(r[k]) for r in rows])
    raw, cost = col("raw_return"), col("cost")
    return EpisodeResult(
        dates=[r["date"] for r in rows], tickers=tickers, raw_returns=raw,
        rewards=col("regulated_return") - cost, regulated_returns=col("regulated_return"),
        weights=weights.reshape(len(rows), len(tickers)), phi=col("phi"), psi=col("psi"),
        turnover=col("turnover"), cost=cost, values=col("value"),
    )
