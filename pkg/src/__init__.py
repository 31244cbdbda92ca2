"""
VidLang - video-language contrastive pre-training on a numpy autodiff engine
"""

__version__ = "0.1.0"
