"""Treatment-effect estimation from locally differentially private experiment data."""

from .core import (
    DegenerateDataError,
    EstimateReport,
    LdpCausalError,
    PrivacyBudget,
    RandomSource,
    RawDataset,
    RawRecord,
    ValidationError,
    derive_stream,
    validate_dataset,
)

__version__ = "0.1.0"
