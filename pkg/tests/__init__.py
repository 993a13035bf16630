"""Tests for screen-feedback-agent."""
