"""
Configuration management for crowdmap.
"""

import copy
import os
from typing import Any, Dict, Optional

import yaml

from ..exceptions import ValidationError
from .logger import get_logger

logger = get_logger(__name__)

# Keys whose defaults come from the published method; every other default is an
# artifact decision.
PUBLISHED_KEYS = frozenset({
    'density.sigma',
    'augment.window',
    'augment.stride',
    'training.learning_rate',
    'training.batch_size',
})


class Config:
    """
    Configuration manager for crowdmap settings.
    """

    DEFAULTS = {
        'density': {
            'sigma': 4.0,
            'truncation': 3.0,
        },
        'knn': {
            'k': 3,
            'beta': 0.3,
            'fallback_sigma': 4.0,
            'min_sigma': 0.5,
        },
        'face': {
            't_overlaps': 3,
            'crowded_sigma': 4.0,
            'sigma_scale': 1.0,
            'distance_epsilon': 1e-6,
            'overlap_against': 'regions',
        },
        'augment': {
            'window': 256,
            'stride': 70,
            'noise': True,
        },
        'noise': {
            'gaussian_stddev': 5.0,
            'brightness_delta': 20.0,
            'contrast_low': 0.8,
            'contrast_high': 1.25,
            'seed': 0,
        },
        'training': {
            'streams': 3,
            'learning_rate': 1e-5,
            'batch_size': 32,
            'epochs': 200,
            'max_steps': None,
            'seed': 0,
            'init_std': 0.01,
            'shrink': 1,
            'append_final_conv': False,
        },
        'runtime': {
            'threads': None,
        },
    }

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize configuration.

        Args:
            config_file: Path to YAML configuration file
        """
        self.config = copy.deepcopy(self.DEFAULTS)

        if config_file:
            self.load_config(config_file)

    def load_config(self, config_file: str) -> None:
        """
        Load configuration from YAML file and merge it over the current values.

        Args:
            config_file: Path to YAML configuration file
        """
        try:
            with open(config_file, 'r', encoding='utf-8') as file:
                user_config = yaml.safe_load(file) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ValidationError(f"cannot read configuration {config_file}: {exc}") from exc
        if not isinstance(user_config, dict):
            raise ValidationError(f"{config_file}: top level must be a mapping")
        self._update_config(self.config, user_config, prefix='')
        logger.info(f"Configuration loaded from {config_file}")

    def _update_config(self, default: Dict, user: Dict, prefix: str) -> None:
        """
        Recursively update default config with user config.
        """
        for key, value in user.items():
            if key not in default:
                logger.warning(f"Ignoring unknown configuration key '{prefix}{key}'")
                continue
            if isinstance(value, dict) and isinstance(default[key], dict):
                self._update_config(default[key], value, prefix=f"{prefix}{key}.")
            else:
                default[key] = value

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value using dot notation.

        Args:
            key: Configuration key (e.g., 'knn.beta')
            default: Default value if key not found

        Returns:
            Configuration value
        """
        value = self.config
        try:
            for k in key.split('.'):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any) -> None:
        """
        Set configuration value using dot notation.

        Args:
            key: Configuration key
            value: New value
        """
        keys = key.split('.')
        config = self.config

        for k in keys[:-1]:
            config = config.setdefault(k, {})

        config[keys[-1]] = value

    def threads(self) -> int:
        """Worker cap: CROWDMAP_THREADS, then runtime.threads, then the CPU count."""
        env = os.environ.get('CROWDMAP_THREADS')
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ValidationError(f"CROWDMAP_THREADS must be an integer, got {env!r}") from None
        configured = self.get('runtime.threads')
        if configured:
            return max(1, int(configured))
        return os.cpu_count() or 1

    @staticmethod
    def provenance(key: str) -> str:
        """Return 'published' or 'artifact-default' for a dotted key."""
        return 'published' if key in PUBLISHED_KEYS else 'artifact-default'

    def resolved(self) -> Dict[str, Dict[str, Any]]:
        """
        Flatten the configuration with provenance per field.

        Returns:
            Mapping of dotted key to {'value': ..., 'provenance': ...}
        """
        flat = {}

        def walk(node: Dict, prefix: str) -> None:
            for key in sorted(node):
                value = node[key]
                dotted = f"{prefix}{key}"
                if isinstance(value, dict):
                    walk(value, dotted + '.')
                else:
                    flat[dotted] = {'value': value, 'provenance': self.provenance(dotted)}

        walk(self.config, '')
        return flat

    def save_config(self, config_file: str) -> None:
        """
        Save current configuration to YAML file.

        Args:
            config_file: Path to save configuration
        """
        directory = os.path.dirname(config_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(config_file, 'w', encoding='utf-8') as file:
            yaml.safe_dump(self.config, file, default_flow_style=False, sort_keys=True)
        logger.info(f"Configuration saved to {config_file}")

    def show_config(self) -> str:
        """
        Render current configuration as YAML text.
        """
        return yaml.safe_dump(self.config, default_flow_style=False, sort_keys=True)
