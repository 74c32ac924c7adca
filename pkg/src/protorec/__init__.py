"""Incremental prototype-based object recognition.

Feature descriptors are matched against a growing store of user-validated
prototypes via a random-projection-tree index; answers carry graded
confidence and can be refined with capture-context metadata.
"""

from .vectors import Descriptor, distance, fuse_distance, l2_normalize

__all__ = ["Descriptor", "distance", "fuse_distance", "l2_normalize"]

__version__ = "0.1.0"
