"""Test package for Theseus."""
