import copy
import json
import logging
import os
from typing import Dict, Optional

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "training": {
        "lr": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_epsilon": 1e-8,
        "decay": 0.95,
        "batch_size": 30,
        "d": 150,
        "variant": "mlstm",
        "seed": 0,
        "shuffle": True,
        "workers": 1,
        "clip_norm": None,
        "shared_encoder": True
    },
    "embeddings": {
        "dim": 300,
        "window": 9
    },
    "introspect": {
        "stopwords_file": "stopwords_en_v1.txt",
        "null_threshold": 0.5,
        "tokens": ["not"]
    },
    "checkgrad": {
        "epsilon": 1e-5,
        "tolerance": 1e-4,
        "l": 5,
        "premise_len": 4,
        "hypothesis_len": 3
    },
    "logging": {
        "log_file": "match_lstm.log"
    }
}


def config_dir() -> str:
    """Directory holding config.json and shipped resources."""
    return os.getenv("CONFIG_DIR", "config")


def resource_path(name: str) -> str:
    return os.path.join(config_dir(), name)


def log_dir() -> str:
    # Logs sit next to the config directory, or in the cwd when CONFIG_DIR is unset
    if os.getenv("CONFIG_DIR"):
        return os.path.join(os.path.dirname(os.path.abspath(os.getenv("CONFIG_DIR"))), "logs")
    return "."


def load_config(path: Optional[str] = None) -> Dict:
    """
    Loads config.json and merges it over DEFAULT_CONFIG section by section.
    A missing file yields the defaults; a malformed file is logged and ignored.
    """
    merged = copy.deepcopy(DEFAULT_CONFIG)
    path = path or resource_path("config.json")
    if not os.path.exists(path):
        logger.info(f"No config file at {path}, using defaults")
        return merged
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in {path}: {e}")
        return merged

    for section, values in loaded.items():
        if isinstance(values, dict) and isinstance(merged.get(section), dict):
            merged[section].update(values)
        else:
            merged[section] = values
    return merged
