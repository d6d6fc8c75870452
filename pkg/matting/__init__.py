"""Matting toolkit: compositing, trimaps, non-local attention, losses, metrics and graph accounting."""
from matting.shared.settings import TOOL_VERSION

__version__ = TOOL_VERSION
