"""Command-line tools: ingestion, cross-validation, proxy-space search."""
