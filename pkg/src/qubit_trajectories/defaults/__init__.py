"""Bundled preset file and example configuration."""
