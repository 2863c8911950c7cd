"""Global-local attention with stratified crop sampling for real/fake image classification."""

__version__ = "0.1.0"
