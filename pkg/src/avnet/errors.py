class AvnetError(Exception):
    pass


class ScenarioError(AvnetError):
    """A scenario refers to something that does not exist or is malformed."""


class ProtocolError(AvnetError):
    """An operation was invoked outside its precondition (a bug, not an attack)."""


class ConfigurationError(AvnetError):
    pass


class AuthUnavailable(AvnetError):
    """The SC-TPD has no pseudonym left to sign with."""


class CompartmentViolation(AvnetError):
    """A non-safety-critical source tried to write safety-critical state."""


class InvariantBreach(AvnetError):
    def __init__(self, message: str, event=None):
        super().__init__(message)
        self.event = event
