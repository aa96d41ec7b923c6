"""restorex: score image-restoration outputs by how useful they are to an object detector."""

__version__ = "0.1.0"
