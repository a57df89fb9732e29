from .builtin import build_standard_callbacks
from .callbacks import CallbackOutcome, CallbackRegistry, TemplateOption
from .engine import (
    CHIME_IN_WINDOW,
    ComposeContext,
    ComposedResponse,
    advance,
    calendar_gate,
    compose_response,
    resume,
    returning_user_variant,
    select_next_miniflow,
    suspend,
)
from .generator import FlowRg, rng_for
from .loader import load_flow, load_flow_dir, load_flow_file
from .model import (
    CalendarWindow,
    FlowCursor,
    FlowEdge,
    FlowGraph,
    FlowNode,
    Miniflow,
    SegmentSpec,
    validate_graph,
)

__all__ = [
    "CHIME_IN_WINDOW",
    "CalendarWindow",
    "CallbackOutcome",
    "CallbackRegistry",
    "ComposeContext",
    "ComposedResponse",
    "FlowCursor",
    "FlowEdge",
    "FlowGraph",
    "FlowNode",
    "FlowRg",
    "Miniflow",
    "SegmentSpec",
    "TemplateOption",
    "advance",
    "build_standard_callbacks",
    "calendar_gate",
    "compose_response",
    "load_flow",
    "load_flow_dir",
    "load_flow_file",
    "resume",
    "returning_user_variant",
    "rng_for",
    "select_next_miniflow",
    "suspend",
    "validate_graph",
]
