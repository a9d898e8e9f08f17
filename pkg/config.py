"""
Environment configuration
"""
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("TRENDSUM_LOG_LEVEL", "INFO")
TEMPLATES_PATH = Path(os.getenv("TRENDSUM_TEMPLATES", str(Path(__file__).parent / "templates.json")))
WORKERS = int(os.getenv("TRENDSUM_WORKERS", "1"))
# leaf and utility-head training; "lbfgs" runs to convergence, "gd" uses the learning rate
LEAF_SOLVER = os.getenv("TRENDSUM_LEAF_SOLVER", "lbfgs")
LEAF_EPOCHS = int(os.getenv("TRENDSUM_LEAF_EPOCHS", "5000"))
LEAF_LEARNING_RATE = float(os.getenv("TRENDSUM_LEAF_LEARNING_RATE", "0.1"))
LEAF_L2 = float(os.getenv("TRENDSUM_LEAF_L2", "1e-8"))
HEAD_L2 = float(os.getenv("TRENDSUM_HEAD_L2", "1e-4"))
# 0 pairs every trend with all other trends of its series
MAX_PARTNERS_PER_TREND = int(os.getenv("TRENDSUM_MAX_PARTNERS_PER_TREND", "0"))

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = None) -> None:
    """Set up logging to stderr; stdout is reserved for results"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
