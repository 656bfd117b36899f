"""Tests for the crt_restore package."""
