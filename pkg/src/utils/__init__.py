"""
Utility modules for the group key toolkit

Provides configuration and key-safe logging.
"""

from .config import GKMConfig, get_config, load_config
from .secure_logging import (
    KeyMaterialRedactingFormatter,
    SecureFileHandler,
    SecureLogger,
    configure_secure_logging,
    get_secure_logger,
    redact_key_material,
)

__all__ = [
    # Configuration
    'GKMConfig',
    'get_config',
    'load_config',

    # Logging
    'configure_secure_logging',
    'get_secure_logger',
    'SecureLogger',
    'KeyMaterialRedactingFormatter',
    'SecureFileHandler',
    'redact_key_material',
]
