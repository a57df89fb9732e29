"""Tapestry: an open-domain dialogue orchestration engine that composes
conversations by interleaving flow-graph, knowledge-graph, and fun-fact
response generators under a contract-based dialogue manager."""

from .config import EngineConfig
from .gateway import Engine, create_app

__version__ = "0.1.0"
__all__ = ["Engine", "EngineConfig", "create_app", "__version__"]
