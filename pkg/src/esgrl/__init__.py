"""Portfolio allocation with deep RL agents under ESG-based reward regulation."""
from .analytics import compute_metrics, run_baseline
from .env import EnvConfig, PortfolioEnv, regulate
from .marketdata import AlignedDataset, synth_market

__version__ = "0.1.0"

__all__ = ["AlignedDataset", "EnvConfig", "PortfolioEnv", "compute_metrics", "regulate",
           "run_baseline", "synth_market"]
