"""Transform-Vision encoder and masked-image-modeling pre-training on a numpy autodiff core."""
__version__ = "0.1.0"
