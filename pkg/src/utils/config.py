import os
import logging
from dataclasses import fields
from typing import Dict, Any, Optional, List

from src.exceptions import ConfigurationError
from src.models.config import ModelConfig

logger = logging.getLogger('ParaFormer')

try:
    import yaml
    YAML_AVAILABLE = True
except ImportError:
    YAML_AVAILABLE = False

DEFAULT_CONFIG_PATHS = [
    './paraformer.yaml',
    './config/paraformer.yaml',
    '~/.config/paraformer/config.yaml',
]

ENV_CONFIG = 'PARAFORMER_CONFIG'
ENV_SEED = 'PARAFORMER_SEED'
ENV_LOG_LEVEL = 'PARAFORMER_LOG_LEVEL'

TRAIN_KEYS = ('epochs', 'lr', 'weight_decay', 'warmup_epochs', 'min_lr', 'grad_clip')
DATA_KEYS = ('pairs', 'keypoints', 'descriptor_dim', 'noise', 'distractor_ratio',
             'image_width', 'image_height', 'gt_threshold')
SECTIONS = ('model', 'train', 'data')


def find_file(paths: List[str]) -> Optional[str]:
    """Search for a file in multiple locations."""
    for path in paths:
        expanded_path = os.path.expanduser(path)
        if os.path.exists(expanded_path):
            return expanded_path
    return None


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from a YAML file.

    Args:
        config_path: Optional path to config file. If not provided, PARAFORMER_CONFIG
            and then the default locations are tried.

    Returns:
        Dictionary containing configuration, or empty dict if no config found or YAML unavailable.

    Raises:
        ConfigurationError: an explicitly named file is missing or malformed
    """
    explicit = config_path or os.environ.get(ENV_CONFIG)
    if explicit:
        file_path = os.path.expanduser(explicit)
        if not os.path.exists(file_path):
            raise ConfigurationError(f"Config file not found: {explicit}")
    else:
        file_path = find_file(DEFAULT_CONFIG_PATHS)

    if not file_path:
        logger.debug("No config file found. Using default configuration.")
        return {}

    if not YAML_AVAILABLE:
        logger.warning("pyyaml is not installed. Install with 'pip install paraformer-desk[yaml]' to use config files.")
        return {}

    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Error loading config from {file_path}: {e}") from e

    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigurationError(f"Invalid config format in {file_path}: expected a mapping")
    unknown = set(config) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"Unknown config sections in {file_path}: {sorted(unknown)}")
    for section in SECTIONS:
        if config.get(section) is not None and not isinstance(config[section], dict):
            raise ConfigurationError(f"Section '{section}' in {file_path} must be a mapping")

    logger.info(f"Loaded configuration from {file_path}")
    return config


def section(config: Dict[str, Any], name: str, allowed: Optional[List[str]] = None) -> Dict[str, Any]:
    """One section of a loaded config, checked against its allowed keys."""
    values = dict(config.get(name) or {})
    if allowed is not None:
        unknown = set(values) - set(allowed)
        if unknown:
            raise ConfigurationError(f"Unknown {name} config keys: {sorted(unknown)}")
    return values


def model_keys() -> List[str]:
    return [f.name for f in fields(ModelConfig)]


def env_overrides() -> Dict[str, Any]:
    """Settings taken from the environment (the middle configuration layer)."""
    out: Dict[str, Any] = {}
    seed = os.environ.get(ENV_SEED)
    if seed not in (None, ''):
        try:
            out['seed'] = int(seed)
        except ValueError as e:
            raise ConfigurationError(f"{ENV_SEED} must be an integer, got '{seed}'") from e
    level = os.environ.get(ENV_LOG_LEVEL)
    if level:
        out['log_level'] = level
    return out


def merge_config_and_args(config: Dict[str, Any], args_dict: Dict[str, Any]) -> Dict[str, Any]:
    """Merge configuration from file and command line arguments."""
    result = {}
    result.update(config)

    for key, value in args_dict.items():
        if value is not None:
            result[key] = value

    return result
