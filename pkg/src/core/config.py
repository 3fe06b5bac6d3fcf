"""
Run Configuration for the QLDS toolkit
Resolves defaults, config files, QLDS_ environment variables and command-line overrides
"""

import os
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union
import numpy as np
from dotenv import dotenv_values
from src.core.errors import ConfigError
from src.core.structured_logging import get_structured_logger

ENV_PREFIX = "QLDS_"

LAMBDA_SOURCES = ("whole", "unlabeled")
PROPORTION_MODES = ("matched", "truth")
THEORY_VARIANTS = ("corrected", "appendix", "main_text")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# Alternate spellings accepted in config files and the environment
KEY_ALIASES = {"g_sign_variant": "theory_variant"}

logger = get_structured_logger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved global parameters of one command invocation"""
    seed: int = 0
    output_dir: str = "qlds_output"
    lambda_source: str = "whole"
    lambda_inflation: float = 1e-3
    proportion_mode: str = "matched"
    theory_variant: str = "corrected"
    jobs: Optional[int] = None
    folds: int = 10
    n_trials: int = 20
    grid_file: Optional[str] = None
    log_level: str = "WARNING"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def assume_matched_proportions(self) -> bool:
        return self.proportion_mode == "matched"


def _field_names() -> List[str]:
    return [f.name for f in fields(RunConfig)]


def _normalize_key(key: str) -> str:
    name = key.strip().lower()
    if name.startswith(ENV_PREFIX.lower()):
        name = name[len(ENV_PREFIX):]
    return KEY_ALIASES.get(name, name)


def _coerce(key: str, raw: Any) -> Any:
    """Convert a raw value to the field's type, validating its domain"""
    if raw is None:
        return None
    text = raw.strip() if isinstance(raw, str) else raw
    try:
        if key in ("seed", "folds", "n_trials"):
            value: Any = int(text)
        elif key == "jobs":
            value = None if text in ("", "auto") else int(text)
        elif key == "lambda_inflation":
            value = float(text)
        elif key in ("grid_file",):
            value = str(text) if text != "" else None
        elif key == "log_level":
            value = str(text).upper()
        else:
            value = str(text)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {raw!r}", key=key, value=str(raw)) from e

    domains = {
        "lambda_source": LAMBDA_SOURCES,
        "proportion_mode": PROPORTION_MODES,
        "theory_variant": THEORY_VARIANTS,
        "log_level": LOG_LEVELS,
    }
    if key in domains and value not in domains[key]:
        raise ConfigError(
            f"Invalid value for {key}: {raw!r} (expected one of {', '.join(domains[key])})",
            key=key, value=str(raw)
        )
    if key == "seed" and not 0 <= value < 2 ** 64:
        raise ConfigError("seed must be a nonnegative 64-bit integer", key=key, value=str(raw))
    if key == "folds" and value < 2:
        raise ConfigError("folds must be at least 2", key=key, value=str(raw))
    if key == "n_trials" and value < 1:
        raise ConfigError("n_trials must be positive", key=key, value=str(raw))
    if key == "lambda_inflation" and not value >= 0:
        raise ConfigError("lambda_inflation must be nonnegative", key=key, value=str(raw))
    return value


def _apply(resolved: Dict[str, Any], source: Mapping[str, Any], origin: str, strict: bool) -> None:
    known = set(_field_names())
    for raw_key, raw_value in source.items():
        key = _normalize_key(raw_key)
        if key == "environment":
            # read by structured_logging, not part of a run
            continue
        if key not in known:
            if strict:
                raise ConfigError(f"Unknown configuration key: {raw_key}", key=raw_key, origin=origin)
            continue
        resolved[key] = _coerce(key, raw_value)


def load_run_config(config_path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None,
                    environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Resolve a RunConfig: defaults < config file < QLDS_ environment < overrides.

    Overrides whose value is None are treated as absent so argparse namespaces can be passed through.
    """
    resolved: Dict[str, Any] = asdict(RunConfig())

    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}", path=str(path))
        _apply(resolved, dotenv_values(path), origin=str(path), strict=True)

    env = os.environ if environ is None else environ
    env_values = {k: v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    _apply(resolved, env_values, origin="environment", strict=True)

    if overrides:
        _apply(resolved, {k: v for k, v in overrides.items() if v is not None}, origin="flags", strict=False)

    config = RunConfig(**resolved)
    logger.debug("run_config_resolved", **config.to_dict())
    return config


def derive_seeds(root_seed: int, count: int) -> List[int]:
    """Per-trial 64-bit seeds spawned from the root seed"""
    children = np.random.SeedSequence(root_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]
