"""Diverse multi-question generation over narrative passages.

Subpackages are imported on demand; ``storyqg.qg_model`` and
``storyqg.answerability.model`` pull in torch, everything else is
numpy/stdlib only.
"""

__version__ = "0.1.0"
