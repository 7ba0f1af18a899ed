from .builtins import FixtureTransport, TransportError, core_registry
from .registry import (
    PolicyError,
    ToolContext,
    ToolEnvelope,
    ToolParam,
    ToolRegistrationError,
    ToolRegistry,
    ToolResult,
    ToolSchema,
    ToolValidationError,
    invoke,
    list_capabilities,
    validate_args,
)
from .tables import TableHandle, TableRegistry

__all__ = [
    "FixtureTransport",
    "TransportError",
    "core_registry",
    "PolicyError",
    "ToolContext",
    "ToolEnvelope",
    "ToolParam",
    "ToolRegistrationError",
    "ToolRegistry",
    "ToolResult",
    "ToolSchema",
    "ToolValidationError",
    "invoke",
    "list_capabilities",
    "validate_args",
    "TableHandle",
    "TableRegistry",
]
