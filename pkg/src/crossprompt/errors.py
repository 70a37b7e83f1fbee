"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class CrossPromptError(Exception):
    exit_code = 1


class ConfigurationError(CrossPromptError, ValueError):
    """Inconsistent or missing configuration (templates, verbalizers, methods)."""

    exit_code = 2


class VerbalizerValidationError(ConfigurationError):
    """A verbalizer failed validation.

    ``problems`` lists every offending entry, not just the first one.
    """

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            message = message + ": " + "; ".join(self.problems)
        super().__init__(message)


class InputError(CrossPromptError, ValueError):
    """Malformed data passed to an operation."""

    exit_code = 3


class BackendUnavailableError(CrossPromptError, OSError):
    """A model artifact or other environment resource is missing."""

    exit_code = 4


class GenerationError(CrossPromptError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""

    exit_code = 5


class ProtocolError(CrossPromptError, RuntimeError):
    """The few-shot protocol was violated, e.g. target-language data in training."""

    exit_code = 6
