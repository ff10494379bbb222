"""Attentional text-to-image generation for Bangla captions.

Subpackages: numerics (autodiff core), textdata (tokenizer, vocabulary,
datasets), encoders (text/image feature extractors), attention (word-context
attention), damsm (image-text matching pretraining), gan (staged generator
and discriminators), metrics (FID / inception-style scores), cli.
"""

__version__ = "0.1.0"
