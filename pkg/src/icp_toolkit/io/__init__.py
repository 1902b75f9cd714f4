"""Point-cloud, fixture and run-report files."""
