"""Low-distortion, low-bending manifold embeddings learned from sampled point triples."""

__version__ = "0.1.0"
