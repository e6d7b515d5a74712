"""Exception types raised across the toolkit."""


class HiddenVisitError(Exception):
    """Base class for all toolkit errors."""


class OutOfWindowError(HiddenVisitError, ValueError):
    """A timestamp falls outside the configured study window."""


class OrderingError(HiddenVisitError, ValueError):
    """Input that must be time-ordered is not."""


class ContractError(HiddenVisitError, ValueError):
    """An operation was called on input violating its precondition."""


class UnresolvedTowerError(HiddenVisitError, KeyError):
    """A tower id could not be found where it must exist."""


class DuplicateTowerError(HiddenVisitError, ValueError):
    """The same tower id was registered with conflicting coordinates."""


class DegenerateDataError(HiddenVisitError, ValueError):
    """Training data lacks one of the two classes."""


class EmptyDatasetError(HiddenVisitError, ValueError):
    """An operation needs at least one observation and got none."""


class UndefinedMetricError(HiddenVisitError, ValueError):
    """A metric is undefined for the given input (e.g. AUC with one class)."""


class ConfigError(HiddenVisitError, ValueError):
    """Configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


class MissingPrerequisiteError(HiddenVisitError):
    """A pipeline stage was run before the stage it depends on."""

    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage '{stage}' requires stage '{missing}' to be run first")
