"""Tests for turbo-attn."""
