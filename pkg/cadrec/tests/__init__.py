"""Tests for CaDRec."""
