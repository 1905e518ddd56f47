"""Exception hierarchy shared by all modules."""


class ZonetrapError(Exception):
    """Base class for toolkit errors."""


class ModelDomainError(ZonetrapError, ValueError):
    """Evaluation requested outside the model's domain (e.g. z <= 0)."""


class NoWellFound(ZonetrapError):
    """Well search did not converge or landed on a saddle."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class Infeasible(ZonetrapError):
    """Targets cannot be met within the hardware limits."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SlewViolation(Infeasible):
    def __init__(self, electrode, sample, rate):
        super().__init__(f"slew limit exceeded on {electrode!r} at sample {sample} ({rate:.3g} V/s)",
                         {"electrode": electrode, "sample": sample, "rate": rate})
        self.electrode = electrode
        self.sample = sample


class UnknownElectrode(ZonetrapError, KeyError):
    pass


class AntiTrapping(ZonetrapError):
    def __init__(self, positions):
        super().__init__(f"negative squared frequency at {len(positions)} position(s)")
        self.positions = list(positions)


class RankDeficient(ZonetrapError):
    pass


class NoConvergence(ZonetrapError):
    pass


class Diverged(ZonetrapError):
    pass


class IonLost(ZonetrapError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class TruncationTooSmall(ZonetrapError):
    pass


class DegenerateData(ZonetrapError):
    pass


class DegenerateVariance(ZonetrapError):
    pass


class NoPeak(ZonetrapError):
    pass


class ConfigError(ZonetrapError):
    """Base for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        super().__init__(f"{message} (line {line}, column {column})" if line else message)
        self.line = line
        self.column = column


class SchemaError(ConfigError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class UnitError(ConfigError):
    pass
