"""Tests for qpfit."""
