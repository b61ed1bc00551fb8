class SeqExpError(Exception):
    exit_code = 1

    def __init__(self, message=None):
        msg = message or self.__class__.__name__
        super().__init__(msg)
        if isinstance(msg, (str, bytes)):
            self.messages = [msg]
        else:
            self.messages = msg


class ConfigError(SeqExpError):
    exit_code = 2


class InvalidPairError(ConfigError):
    pass


class InvalidRunConfigError(ConfigError):
    pass


class InvalidPlanError(ConfigError):
    pass


class DomainError(SeqExpError, ValueError):
    exit_code = 2


class InvalidThresholdError(DomainError):
    pass


class NumericalError(SeqExpError):
    exit_code = 3


class ToleranceNotReachedError(NumericalError):
    pass


class ArithmeticPairError(NumericalError):
    pass


class UnsupportedPairError(NumericalError):
    pass


class SimulationError(SeqExpError):
    exit_code = 4


class InvalidPointError(SimulationError):
    pass
