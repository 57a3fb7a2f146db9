"""Command-line experiments for the nonlocal compliance optimization core."""
