"""
Unsupervised domain-adaptive binary segmentation for electron-microscopy-style image stacks.
"""

__version__ = "0.1.0"
