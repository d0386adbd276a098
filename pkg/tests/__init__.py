"""Test suite for relational-iqa."""
