"""Occlusion-aware video instance segmentation core: losses, query
initialization, clip mask synthesis and a near-online tracker."""

__version__ = "0.1.0"
