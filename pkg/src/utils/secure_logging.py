#!/usr/bin/env python3
"""
Logging configuration for the group key toolkit

Log records never carry key material: the formatter masks byte literals and
long hex runs before anything reaches a handler. Protocol audit events go
to a separate "<app>.security" logger.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import logging
import os
import re
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

APP_NAME = "gkm"

REDACTION_PATTERNS = {
    # bytes reprs such as b'\x8f...' or b"..."
    r"b'(?:[^'\\]|\\.)*'": "[KEY_REDACTED]",
    r'b"(?:[^"\\]|\\.)*"': "[KEY_REDACTED]",
    # hex dumps of secrets, nonces and ciphertexts
    r'\b(?:0x)?[0-9a-fA-F]{16,}\b': "[HEX_REDACTED]",
    # secret=..., key=..., seed=... assignments
    r'\b(secret|key|seed)=[^\s,}]+': r'\1=[REDACTED]',
}


def redact_key_material(message: str) -> str:
    for pattern, replacement in REDACTION_PATTERNS.items():
        message = re.sub(pattern, replacement, message)
    return message


class KeyMaterialRedactingFormatter(logging.Formatter):
    """Formatter that strips secrets from the rendered message"""

    def format(self, record: logging.LogRecord) -> str:
        return redact_key_material(super().format(record))


class SecureFileHandler(logging.FileHandler):
    """File handler with owner/group-only permissions"""

    def __init__(self, filename: str, mode: str = 'a'):
        log_path = Path(filename)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        super().__init__(filename, mode)

        if log_path.exists():
            os.chmod(log_path, 0o640)


def configure_secure_logging(
    app_name: str = APP_NAME,
    log_level: str = "INFO",
    log_dir: Optional[str] = None
) -> logging.Logger:
    """Configure the application logger; file handlers only when log_dir is set"""

    logger = logging.getLogger(app_name)
    logger.setLevel(getattr(logging, log_level.upper()))
    logger.handlers.clear()

    detailed_formatter = KeyMaterialRedactingFormatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(lineno)d - %(message)s'
    )
    simple_formatter = KeyMaterialRedactingFormatter('%(asctime)s - %(levelname)s - %(message)s')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, log_level.upper()))
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    # library modules log under their package names
    for package in ("core", "simulation", "reporting"):
        package_logger = logging.getLogger(package)
        package_logger.setLevel(getattr(logging, log_level.upper()))
        package_logger.handlers = [console_handler]
        package_logger.propagate = False

    audit_logger = logging.getLogger(f"{app_name}.security")
    audit_logger.setLevel(logging.INFO)
    audit_logger.handlers.clear()

    if log_dir:
        log_path = Path(log_dir)
        stamp = datetime.now().strftime('%Y%m%d')

        file_handler = SecureFileHandler(str(log_path / f"{app_name}_{stamp}.log"))
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        error_handler = SecureFileHandler(str(log_path / f"{app_name}_errors_{stamp}.log"))
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

        audit_handler = SecureFileHandler(str(log_path / "audit" / f"protocol_audit_{stamp}.log"))
        audit_handler.setLevel(logging.INFO)
        audit_handler.setFormatter(detailed_formatter)
        audit_logger.addHandler(audit_handler)

    return logger


class SecureLogger:
    """Wrapper for protocol audit events"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def log_rekey(self, event: str, subgroup: str, multicasts: int, unicasts: int):
        self.logger.info(f"Rekey: event={event} subgroup={subgroup} M={multicasts} U={unicasts}")

    def log_security_event(self, event_type: str, details: Dict[str, Any]):
        """Log a probe result or invariant failure with sanitized details"""
        safe_details = {
            key: redact_key_material(value) if isinstance(value, str) else value
            for key, value in details.items()
        }
        self.logger.warning(f"Security event: {event_type} - {safe_details}")


def get_secure_logger(name: str = "security") -> SecureLogger:
    return SecureLogger(logging.getLogger(f"{APP_NAME}.{name}"))
