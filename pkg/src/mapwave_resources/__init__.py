"""Packaged default resources for mapwave installs."""
