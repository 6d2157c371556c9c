"""Neural surrogate pipeline for 2D PDE fields.

Universal discrete tokenizer, autoregressive token dynamics model, and
pixel-space refinement, with Well-protocol evaluation and a reproducible
CLI driver.
"""

__version__ = "0.1.0"
