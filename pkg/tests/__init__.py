"""Tests for fspda-sim."""
