"""
Model module - multimodal transformer encoder-decoder, parameters and checkpoints
"""

from .config import ModelConfig
from .params import ModelParams
from .network import EncodedPair, VideoTextTransformer
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .vocab import Vocabulary, load_vocabulary
