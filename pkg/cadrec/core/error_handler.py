"""Centralized error handling and logging."""

import logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4


class CadrecError(Exception):
    """Base exception for recommender errors."""

    pass


class ConfigError(CadrecError):
    """Invalid configuration value or file."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DataError(CadrecError):
    """Unreadable, missing or empty input data."""

    pass


class ParseError(DataError):
    """Malformed line in an interaction file."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ModelError(CadrecError):
    """Checkpoint does not match the data, or the model state is unusable."""

    pass


class NumericalError(ModelError):
    """Non-finite gradient or parameter."""

    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


class ContractViolation(CadrecError, ValueError):
    """A precondition of an algorithm was not met."""

    pass


def exit_code_for(error: BaseException, context: str | None = None) -> int:
    """
    Map an error to the CLI exit-code contract and log it.

    Args:
        error: The exception that occurred
        context: Additional context about where the error occurred

    Returns:
        2 for configuration errors, 3 for data errors, 4 for model errors,
        1 for anything else
    """
    error_context = f" in {context}" if context else ""

    if isinstance(error, ConfigError):
        field = f" (field: {error.field})" if error.field else ""
        logger.error(f"Configuration error{error_context}{field}: {error}")
        return EXIT_CONFIG
    if isinstance(error, DataError):
        logger.error(f"Data error{error_context}: {error}")
        return EXIT_DATA
    if isinstance(error, (ModelError, ContractViolation)):
        logger.error(f"Model error{error_context}: {error}")
        return EXIT_MODEL

    logger.error(f"Unexpected error{error_context}: {error}", exc_info=True)
    return EXIT_UNEXPECTED


def log_run_event(event_type: str, details: dict, run_id: str | None = None):
    """
    Log run events for monitoring and debugging.

    Args:
        event_type: Type of event (e.g., 'epoch_finished', 'users_dropped')
        details: Event details
        run_id: Optional run identifier
    """
    log_data = {
        "event_type": event_type,
        "details": details,
    }
    if run_id:
        log_data["run_id"] = run_id

    logger.info(f"Run event: {log_data}")
