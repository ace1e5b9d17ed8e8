from dynaconf import Dynaconf
from functools import lru_cache
import os
from loguru import logger


@lru_cache
def load_config() -> dict:
    """
    Load configuration from config/settings.toml using dynaconf.
    Returns the settings as a plain dict with lower-case section keys.
    """
    current_dir = os.path.dirname(os.path.abspath(__file__))
    config_path = f"{current_dir}/config/settings.toml"
    logger.debug(f"Loading config from: {config_path}")
    settings = Dynaconf(
        envvar_prefix="SPDCAL",
        settings_files=[config_path],
        secrets=f"{current_dir}/config/secrets.toml",
    )
    config_dict = {
        str(key).lower(): _lower_keys(value) for key, value in settings.to_dict().items()
    }
    logger.debug(f"Loaded config: {config_dict}")
    return config_dict


def _lower_keys(value):
    if isinstance(value, dict):
        return {str(k).lower(): _lower_keys(v) for k, v in value.items()}
    return value


def load_afterpulse_config() -> dict:
    return load_config()["afterpulse"]


def load_ratecurve_config() -> dict:
    return load_config()["ratecurve"]


def load_consensus_config() -> dict:
    return load_config()["consensus"]


def load_monte_carlo_config() -> dict:
    return load_config()["monte_carlo"]


def load_report_config() -> dict:
    return load_config()["report"]
