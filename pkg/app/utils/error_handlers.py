import logging
from datetime import datetime
from typing import Any, \
    Dict, \
    Optional

from werkzeug.exceptions import HTTPException

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UnlearningError(Exception):
    """Base class for all unlearning errors."""

    status_code = 500
    exit_code = EXIT_DATA
    suggestion = 'Please check the inputs and try again'

    def __init__(self, message: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.payload = payload or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary format."""
        rv = {
            'status': 'error',
            'message': self.message,
            'code': self.status_code,
            'details': {
                'error_type': type(self).__name__,
                'timestamp': datetime.now().isoformat(),
                'error_message': str(self),
                'suggestion': self.payload.get('suggestion',
                                               self.suggestion)}}
        # Add any additional payload fields to details
        for key, value in self.payload.items():
            if key != 'suggestion':
                rv['details'][key] = value
        return rv


class UsageError(UnlearningError):
    """Raised when command-line or request arguments are malformed."""
    status_code = 400
    exit_code = EXIT_USAGE
    suggestion = 'Run with --help to see the accepted arguments'


class DataError(UnlearningError):
    """Raised when input data is inconsistent with what was asked of it."""
    status_code = 400
    exit_code = EXIT_DATA


class DimensionError(DataError):
    """Raised when operand shapes do not conform."""


class UnknownLabel(DataError):
    """Raised when a class or domain name is not in the manifest."""
    status_code = 404
    suggestion = 'Check the class and domain names listed in the manifest'


class InvalidTarget(DataError):
    """Raised when a synthesis target is not a unit vector."""


class InvalidPercentage(DataError):
    """Raised when an accuracy is outside [0, 100]."""
    suggestion = 'Accuracies are percentages between 0 and 100'


class FormatError(DataError):
    """Raised when an artifact file is malformed."""
    suggestion = 'The file is not a valid artifact; regenerate it'


class BadMagic(FormatError):
    """Wrong magic prefix."""


class VersionMismatch(FormatError):
    """Known magic, unsupported format version."""


class TruncatedPayload(FormatError):
    """Payload shorter or longer than the header declares."""


class DimensionOverflow(FormatError):
    """Declared element count above the format limit."""


class BadDtype(FormatError):
    """Unknown element type code."""


class BadDocument(FormatError):
    """JSON document missing, malformed or inconsistent."""


class NumericalContractError(UnlearningError):
    """Raised when a numerical precondition or contract cannot be met."""
    status_code = 422
    exit_code = EXIT_NUMERICAL


class InvalidMatrix(NumericalContractError):
    """Raised for empty, non-finite or rank-zero matrices."""


class ZeroVector(NumericalContractError):
    """Raised when normalizing a zero vector."""


class ForgetSubspaceFull(NumericalContractError):
    """Raised when the forget rows would span the whole embedding space."""
    suggestion = 'Forget fewer classes or use a larger embedding dimension'


class DegenerateResidual(NumericalContractError):
    """Raised when a domain canonical embedding equals the global one."""


class PrototypeSamplingFailed(NumericalContractError):
    """Raised when rejection sampling of class prototypes does not terminate."""
    suggestion = 'Reduce the class count or raise the prototype cosine bound'


class GradientCheckFailed(NumericalContractError):
    """Raised when analytic gradients disagree with finite differences."""


def register_error_handlers(app):
    """Register error handlers for the application."""

    @app.errorhandler(UnlearningError)
    def handle_unlearning_error(error: UnlearningError):
        """Handle unlearning errors."""
        logger.error(f"Unlearning Error: {error.message}",
                     exc_info=True)
        return error.to_dict(), error.status_code

    @app.errorhandler(HTTPException)
    def handle_http_error(error: HTTPException):
        """Handle HTTP errors."""
        logger.error(f"HTTP Error: {error.description}",
                     exc_info=True)
        return {
            'status': 'error',
            'message': error.description,
            'code': error.code,
            'details': {
                'error_type': type(error).__name__,
                'timestamp': datetime.now().isoformat(),
                'error_message': str(error),
                'suggestion': 'Please check your request and try again'}}, error.code

    @app.errorhandler(Exception)
    def handle_generic_error(error: Exception):
        """Handle generic errors."""
        logger.error(f"Unexpected Error: {str(error)}",
                     exc_info=True)
        return {
            'status': 'error',
            'message': 'An unexpected error occurred',
            'code': 500,
            'details': {
                'error_type': type(error).__name__,
                'timestamp': datetime.now().isoformat(),
                'error_message': str(error),
                'suggestion': 'Please try again later or contact support if the issue persists'}}, 500
