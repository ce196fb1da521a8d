#!/usr/bin/env python3
"""
Run configuration: field width, hash, cipher, nonce length, seeds

Values come from config/gkm_config.yaml when present, then CLI overrides.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

try:
    from ..core.exceptions import ConfigError
    from ..core.gf_mds import FIELD_POLYNOMIALS, get_field
    from ..core.rekey import CIPHERS, HashFunction, RekeyCodec
except (ImportError, ValueError):
    import sys
    sys.path.append(str(Path(__file__).parent.parent))
    from core.exceptions import ConfigError
    from core.gf_mds import FIELD_POLYNOMIALS, get_field
    from core.rekey import CIPHERS, HashFunction, RekeyCodec

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config/gkm_config.yaml"


@dataclass
class GKMConfig:
    """Everything that changes the bytes of a run"""
    field_bits: int = 8
    secret_bits: Optional[int] = None
    nonce_bits: int = 64
    hash_name: str = 'sha256'
    cipher_name: str = 'hmac-stream'
    code_length: Optional[int] = None
    seed: int = 7
    log_level: str = 'WARNING'
    log_dir: Optional[str] = None
    fuzz: Dict[str, Any] = field(default_factory=lambda: {
        'events': 1000,
        'members': 1000,
        'subgroups': 8,
        'sample_every': 1,
    })

    def validate(self) -> "GKMConfig":
        if self.field_bits not in FIELD_POLYNOMIALS:
            raise ConfigError(f"field_bits must be one of {sorted(FIELD_POLYNOMIALS)}")
        if self.cipher_name not in CIPHERS:
            raise ConfigError(f"unknown cipher '{self.cipher_name}'")
        HashFunction(self.hash_name)
        if self.secret_bits is not None and self.secret_bits < self.field_bits:
            raise ConfigError("secret bits must be at least the field width")
        return self

    @property
    def point_limit(self) -> int:
        return self.code_length or (1 << self.field_bits) - 1

    def codec_for(self, owner: str) -> RekeyCodec:
        """Fresh codec for one principal (each keeps its own counters)"""
        return RekeyCodec(field=get_field(self.field_bits, self.code_length), hash_name=self.hash_name,
                          cipher_name=self.cipher_name, secret_bits=self.secret_bits,
                          nonce_bits=self.nonce_bits, owner=owner)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _get_default_config() -> Dict[str, Any]:
    return GKMConfig().to_dict()


def _load_config(config_path: str) -> Dict[str, Any]:
    """Read the YAML file; a missing file means defaults"""
    try:
        with open(config_path, 'r') as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError:
        logger.debug(f"{config_path} not found, using defaults")
        return _get_default_config()
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {config_path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must hold a mapping")
    return data.get('gkm', data)


def load_config(config_path: Optional[str] = None, **overrides: Any) -> GKMConfig:
    """Defaults, then the YAML file, then non-None overrides"""
    values = _get_default_config()
    values.update(_load_config(config_path or DEFAULT_CONFIG_PATH))
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = set(GKMConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return GKMConfig(**values).validate()


_config: Optional[GKMConfig] = None


def get_config() -> GKMConfig:
    """Process-wide configuration (loaded on first use)"""
    global _config
    if _config is None:
        _config = load_config()
    return _config
