"""Test package for the server; the name keeps module paths unique."""
