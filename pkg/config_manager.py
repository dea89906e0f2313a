"""
This module provides a small configuration manager for operator defaults.

Settings live in a JSON file (otconfig.json by default). Missing keys fall back
to DEFAULTS, and command line flags override both.
"""
import json
import logging
import os
from typing import Any, Dict

from transport import DEFAULT_PORT, DEFAULT_TIMEOUT
from hashing import DEFAULT_DOMAIN_TAG
from params import DEFAULT_Q

logger = logging.getLogger("Config")

CONFIG_FILE = "otconfig.json"

DEFAULTS: Dict[str, Any] = {
    "port": DEFAULT_PORT,
    "timeout": DEFAULT_TIMEOUT,
    "q": DEFAULT_Q,
    "log_level": "INFO",
    "h1_domain_tag": DEFAULT_DOMAIN_TAG.decode("utf-8"),
}


class ConfigManager:
    """Manages the operator configuration."""
    def __init__(self, config_path: str = CONFIG_FILE):
        """
        Initializes the ConfigManager.

        Args:
            config_path: The path to the configuration file.
        """
        self.config_path = config_path
        self.config: dict = {}
        self.load_config()

    def load_config(self) -> None:
        """Loads the configuration from the specified file, keeping defaults on any problem."""
        if not os.path.exists(self.config_path):
            logger.debug(f"No config file at {self.config_path}, using defaults.")
            self.config = {}
            return
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except (json.JSONDecodeError, OSError) as e:
            logger.warning(f"{self.config_path} is unreadable ({e}). Using default config.")
            self.config = {}
            return
        if not isinstance(loaded, dict):
            logger.warning(f"{self.config_path} does not hold a JSON object. Using default config.")
            self.config = {}
            return
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            logger.warning(f"Ignoring unknown config keys: {', '.join(unknown)}")
        self.config = {k: v for k, v in loaded.items() if k in DEFAULTS}
        logger.info(f"Configuration loaded from {self.config_path}")

    def get(self, key: str, default: Any = None) -> Any:
        """
        Gets a configuration value.

        Args:
            key: The configuration key.
            default: Returned when neither the file nor DEFAULTS has the key.
        """
        if key in self.config:
            return self.config[key]
        return DEFAULTS.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Sets a configuration value and saves the configuration."""
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key '{key}'")
        self.config[key] = value
        self.save_config()

    def save_config(self) -> None:
        """Saves the current configuration to the file."""
        try:
            with open(self.config_path, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=4, sort_keys=True)
        except OSError as e:
            logger.error(f"Could not save config file to {self.config_path}: {e}")
