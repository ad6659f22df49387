"""Init file."""
