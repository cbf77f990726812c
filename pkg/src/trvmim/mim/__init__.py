"""Masked image modeling: block masks, teacher targets, head, loss, optimizer, training step."""
from .masking import MIN_BLOCK, MaskPlan, blockwise_mask
from .objective import corrupt, mask_array, mim_head, neg_cosine_loss
from .optim import (
    LrSchedule,
    OptimizerState,
    TrainingError,
    adamw_step,
    cosine_lr,
    ema_update,
    layerwise_lr,
)
from .teacher import RandomProjectionTeacher, StudentCopyTeacher, TeacherOracle, make_teacher
from .train import mim_forward, mim_loss, pretrain_step, sample_masks
