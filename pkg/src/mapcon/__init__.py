"""Unaligned 3D pose transfer with optimal-transport correspondence and
mesh/point contrastive learning, on a small numpy autodiff core."""

__version__ = "0.1.0"
