"""Exception hierarchy shared by all pcimkit modules."""


class PcimError(Exception):
    """Base class for every error raised by pcimkit."""


class EncodingOverflow(PcimError):
    pass


class DecodingError(PcimError):
    pass


class UnknownDomainTag(PcimError):
    pass


class InsufficientSigners(PcimError):
    pass


class SetMismatch(PcimError):
    pass


class ReorgIntoFinalized(PcimError):
    pass


class FinalityRegression(PcimError):
    pass


class FinalityBeyondTip(PcimError):
    pass


class DomainMismatch(PcimError):
    pass


class DuplicateRelationId(PcimError):
    pass


class UnknownRelation(PcimError):
    pass


class BatchChainBroken(PcimError):
    pass


class UnknownVk(PcimError):
    pass


class VkIntegrityError(UnknownVk):
    """Registry entry no longer hashes to the vk_id it is filed under."""


class BackendMismatch(PcimError):
    pass


class MalformedProof(PcimError):
    pass


class DuplicateEntry(PcimError):
    pass


class NotFound(PcimError):
    pass


class WrongSecret(PcimError):
    pass


class AlreadyConsumed(PcimError):
    pass


class NoReceiptKey(PcimError):
    pass


class ScenarioInvalid(PcimError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
