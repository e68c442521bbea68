# Run log for the CLI: one row per command invocation

from .logger import log_run, recent_runs

__all__ = ['log_run', 'recent_runs']
