# Optimization Package
from src.optim.levenberg_marquardt import LMResult, LMSettings, levenberg_marquardt

__all__ = ["LMResult", "LMSettings", "levenberg_marquardt"]
