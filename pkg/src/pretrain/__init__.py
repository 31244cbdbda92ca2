"""
Pretrain module - augmentation, proxy-task losses, momentum machinery and the training loop
"""

from .augment import AugmentedBatch, AugmentedExample, augment_batch, exact_count
from .momentum import MemoryQueue, QueryKeyState, init_key, key_forward, momentum_update
from .objectives import LossBundle, info_nce, total_loss
from .trainer import PretrainResult, Trainer, run_pretraining
