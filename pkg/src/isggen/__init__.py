"""Incremental scene-graph-to-image generation.

A scene graph grows step by step; each step embeds the full graph,
lays out only the not-yet-generated objects, and renders a new image
conditioned on the previous one so existing content is preserved.
"""

__version__ = "0.1.0"
