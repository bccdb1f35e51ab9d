"""
Settings and run manifests

Precedence: built-in defaults < settings file < command-line flags.
"""
import copy
import json
import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from errors import ContractError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / 'models' / 'saver' / 'model_config.json'

DEFAULTS: Dict[str, Any] = {
    'mode': 'mner',
    'common_dim': 16,
    'budget_k': 2,
    'k_regions': 3,
    'lambda_rel': 1.0,
    'lambda_cov': 1.0,
    'lambda_cons': 1.0,
    'lambda_gate': 0.0,
    'alpha': 0.10,
    'delta': 0.05,
    'calibration_fraction': 0.10,
    'max_span_length': 10,
    'enumerate_spans': False,
    'selector': 'sis',
    'gate_policy': 'calibrated',
    'null_relation': 0,
    'seed': 0,
    'jobs': 1,
    'tau': None,
    'cost': {
        'f_text': 13.0,
        'f_vglob': 5.0,
        'f_vreg_per_k': 15.0,
        'f_fuse_per_k': 5.0,
        'f_head': 2.0,
    },
    'set_encoder': {
        'heads': 2,
        'ff_dim': 32,
    },
}


def _merge(base: dict, update: dict, where: str) -> dict:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ContractError(f"Unknown setting {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ContractError(f"Setting {where}{key!r} must be an object")
            merged[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            merged[key] = value
    return merged


def load_settings(config_path: Optional[Union[str, Path]] = None,
                  overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Resolve settings

    Args:
        config_path: JSON settings file; None uses only the defaults
        overrides: Flag values; None entries are ignored

    Returns:
        Fully populated settings dict
    """
    settings = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ContractError(f"Settings file not found: {path}")
        with open(path, 'r') as f:
            try:
                from_file = json.load(f)
            except json.JSONDecodeError as e:
                raise ContractError(f"{path}: invalid JSON: {e.msg}") from e
        settings = _merge(settings, from_file, '')
        logger.debug("Loaded settings from %s", path)

    if overrides:
        settings = _merge(settings, {k: v for k, v in overrides.items() if v is not None}, '')
    return settings


@dataclass
class RunManifest:
    """Embedded verbatim in every JSON artifact; carries no timestamps"""
    subcommand: str
    config_path: Optional[str]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    version: str = ''
    settings: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def write_artifact(path: Union[str, Path], manifest: RunManifest, payload: Dict[str, Any]) -> Path:
    """JSON artifact: {"manifest": ..., **payload}, stable key order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump({'manifest': manifest.to_dict(), **payload}, f, indent=2)
    return path
