"""dataclaw: a local-first autonomous data agent with IM integration."""

from .core import AgentConfig, AgentEvent, Artifact, ChatMessage, Session, Verbosity

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AgentEvent",
    "Artifact",
    "ChatMessage",
    "Session",
    "Verbosity",
    "__version__",
]
