"""Terminal viewer for run reports."""
