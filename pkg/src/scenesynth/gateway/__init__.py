"""Single seam between the engine and any MLLM/VLM backend."""
from . import prompts
from .client import (
    ROLES,
    GatewayConfig,
    LiveGateway,
    StructuredRequest,
    build_messages,
    encode_image,
    extract_json,
    send,
)
from .mock import MockGateway, decompose, mock_backend, plan_actions
from .schemas import SCHEMAS, validate

__all__ = [
    "ROLES", "SCHEMAS", "GatewayConfig", "LiveGateway", "MockGateway", "StructuredRequest",
    "build_messages", "decompose", "encode_image", "extract_json", "mock_backend", "plan_actions",
    "prompts", "send", "validate",
]
