"""Callback registry for flow segments.

A callback returns template options (possibly empty), may splice in the
resolved segments of a newly opened miniflow, and may contribute state
patches. Callbacks are referenced from flow documents by id only; assets
never embed code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from ..errors import CallbackFailure

if TYPE_CHECKING:
    from .engine import ComposeContext


@dataclass(frozen=True)
class TemplateOption:
    """One selectable text for a segment. ``patch`` is merged into the
    candidate's state patch only when this option is the one sampled."""

    text: str
    meta: dict = field(default_factory=dict)
    patch: dict = field(default_factory=dict)


@dataclass
class CallbackOutcome:
    options: list[TemplateOption] = field(default_factory=list)
    extra_segments: list = field(default_factory=list)  # list[ResolvedSegment]
    patch: dict = field(default_factory=dict)  # applies to every candidate


CallbackFn = Callable[["ComposeContext", dict], CallbackOutcome]


class CallbackRegistry:
    def __init__(self):
        self._callbacks: dict[str, CallbackFn] = {}

    def register(self, callback_id: str, fn: CallbackFn) -> None:
        self._callbacks[callback_id] = fn

    def names(self) -> set[str]:
        return set(self._callbacks)

    def invoke(self, callback_id: str, ctx: "ComposeContext", params: dict) -> CallbackOutcome:
        fn = self._callbacks.get(callback_id)
        if fn is None:
            raise CallbackFailure(callback_id)
        try:
            return fn(ctx, params)
        except CallbackFailure:
            raise
        except Exception as exc:
            raise CallbackFailure(callback_id, exc) from exc
