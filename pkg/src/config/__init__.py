# Config Package
from src.config.pipeline_config import PipelineConfig, config_hash, load_config

__all__ = ["PipelineConfig", "config_hash", "load_config"]
