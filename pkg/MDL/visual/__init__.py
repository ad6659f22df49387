"""Init file."""
from .visual import get_ax, show_history, show_volume

__all__ = ["get_ax", "show_history", "show_volume"]
