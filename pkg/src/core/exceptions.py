#!/usr/bin/env python3
"""
Exception hierarchy for the group key management toolkit

Every error raised by the library derives from GroupKeyError so callers
(the CLI, the fuzz harness) can catch one type and map it to an exit code.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

from typing import Any, Dict, Optional


class GroupKeyError(Exception):
    """Base class for all toolkit errors"""


# Finite-field errors

class FieldError(GroupKeyError):
    """Arithmetic over GF(2^m) failed"""


class DivisionByZero(FieldError):
    """Zero has no multiplicative inverse"""


class SingularSystem(FieldError):
    """Vandermonde system has duplicate or zero evaluation points"""


class OutOfRange(FieldError):
    """Value or position outside the field / code length"""


# Protocol errors

class ProtocolError(GroupKeyError):
    """A protocol rule was broken"""


class FreshnessViolation(ProtocolError):
    """A nonce was offered twice within one subgroup"""


class DegreeViolation(ProtocolError):
    """An internal node would end up with an illegal number of children"""


class AuthFailure(ProtocolError):
    """A sealed key message failed authentication"""


class MembershipError(ProtocolError):
    """Unknown, duplicate or overlapping member ids"""


class MergeAttachmentError(ProtocolError):
    """No attachment point within the allowed weight difference"""


class InvariantViolation(ProtocolError):
    """A run-time invariant failed during a scenario"""

    def __init__(self, message: str, event_index: int = -1,
                 snapshot: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.event_index = event_index
        self.snapshot = snapshot or {}

    def __str__(self) -> str:
        base = super().__str__()
        if self.event_index >= 0:
            return f"event {self.event_index}: {base}"
        return base


# Input errors

class ConfigError(GroupKeyError):
    """Configuration or initial layout is invalid"""


class ScenarioError(GroupKeyError):
    """Scenario file could not be parsed or references unknown members"""

    def __init__(self, message: str, line: int = 0):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        base = super().__str__()
        return f"line {self.line}: {base}" if self.line else base


class TraceParseError(GroupKeyError):
    """Trace file is truncated or malformed"""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset

    def __str__(self) -> str:
        return f"offset {self.offset}: {super().__str__()}"
