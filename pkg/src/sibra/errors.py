"""Exception hierarchy shared by all sibra modules."""


class SibraError(Exception):
    """Base class for every domain error raised by this package."""


class ClassRangeError(SibraError, ValueError):
    """A bandwidth class index is outside its ladder."""


class TooLarge(SibraError, ValueError):
    """Requested rate exceeds the top class of the ladder."""


class MalformedHeader(SibraError, ValueError):
    """Header bytes or header contents violate the wire contract."""


class ShareDomainError(SibraError, ArithmeticError):
    """A fair-share formula was evaluated with a zero denominator or bad input."""


class DuplicateFlowId(SibraError):
    """A flow id is already pending/active with different parameters."""


class UnknownFlow(SibraError, KeyError):
    """No pending or active reservation exists for the flow id."""


class ContractError(SibraError):
    pass


class TopologyError(SibraError, ValueError):
    """Topology or scenario file could not be parsed or is inconsistent."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ScenarioError(SibraError, ValueError):
    """Scenario cannot run on the given topology."""
