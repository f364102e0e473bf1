"""Data loading, experiment orchestration, analysis reports and the CLI."""
