from .extract import ExtractionJob, extract

__all__ = ["ExtractionJob", "extract"]
__version__ = "0.1.0"
