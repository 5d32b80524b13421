"""Python client for processes hosted by the datax runner."""

from .client import (
    DataX,
    DataXError,
    ConnectionLost,
    DatabaseError,
    EmitRefused,
    InvalidPayload,
    NoInputs,
    NoOutput,
)

__all__ = [
    "DataX",
    "DataXError",
    "ConnectionLost",
    "DatabaseError",
    "EmitRefused",
    "InvalidPayload",
    "NoInputs",
    "NoOutput",
]
