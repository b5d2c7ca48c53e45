"""Command line front end, output writers and post-run analysis."""
