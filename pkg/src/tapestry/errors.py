"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class EmptyUtterance(EngineError):
    pass


class IndexMismatch(EngineError):
    pass


class StoreUnavailable(EngineError):
    pass


class UnknownTopic(EngineError):
    pass


class EmptyInventory(EngineError):
    pass


class NoTopicsRemaining(EngineError):
    pass


class EmptyPool(EngineError):
    pass


class ParseError(EngineError):
    pass


class ValidationError(EngineError):
    """Asset validation failure carrying one finding string per problem."""

    def __init__(self, findings: list[str]):
        super().__init__("; ".join(findings))
        self.findings = findings


class AtLeaf(EngineError):
    pass


class UnfillableSlot(EngineError):
    def __init__(self, slot: str):
        super().__init__(f"unfillable slot: {slot}")
        self.slot = slot


class CallbackFailure(EngineError):
    def __init__(self, callback_id: str, cause: Exception | None = None):
        super().__init__(f"callback failed: {callback_id}" + (f" ({cause})" if cause else ""))
        self.callback_id = callback_id
        self.cause = cause


class NoAnchorAvailable(EngineError):
    pass


class DuplicateId(EngineError):
    pass


class UnknownConversation(EngineError):
    pass


class NoRatedConversations(EngineError):
    pass


class DegenerateDistribution(EngineError):
    pass


class MissingMode(EngineError):
    pass
