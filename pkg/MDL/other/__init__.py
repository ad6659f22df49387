"""Module for other functions."""
