"""Physics-based synthetic knee radiographs, radiomics and early-OA grading."""

__version__ = "0.1.0"
