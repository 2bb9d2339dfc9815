"""Run pre-trained speech encoders over audio and export [T, D] hidden-state blobs."""

__version__ = "0.1.0"

from .annotations import AnnotationError, AnnotationRow, load_annotations
from .encoders import SUPPORTED_MODELS, get_encoder
from .extract import ExtractionJob, extract
from .verify import VerifyReport, verify

__all__ = [
    "AnnotationError", "AnnotationRow", "load_annotations",
    "SUPPORTED_MODELS", "get_encoder",
    "ExtractionJob", "extract",
    "VerifyReport", "verify",
    "__version__",
]
