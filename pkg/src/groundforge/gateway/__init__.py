"""Pluggable clients for the six external model roles, the JSON wire
protocol, and the deterministic offline stub backend."""
from .client import BackendEndpoint, GatewayClient, GroundedPhrase, normalize_coords
from .server import StubServer
from .stub import StubBackend, stable_hash64
from .templates import PromptTemplate, default_templates, load_templates
from .wire import ImageRef, ROLES

__all__ = [
    "BackendEndpoint",
    "GatewayClient",
    "GroundedPhrase",
    "ImageRef",
    "PromptTemplate",
    "ROLES",
    "StubBackend",
    "StubServer",
    "default_templates",
    "load_templates",
    "normalize_coords",
    "stable_hash64",
]
