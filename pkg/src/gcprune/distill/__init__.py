"""Attention-transfer and soft-target distillation for pruned detectors."""
from .attention import AttentionMap, attention_loss, attention_map, attention_vectors
from .soft import soft_box_loss, soft_class_loss, total_distill_loss
from .train import (HISTORY_COLUMNS, PAPER_BETAS, DistillConfig, DistillResult, check_taps,
                    class_logits, default_taps, distill_loss_fn, distill_train, finetune,
                    student_boxes_at)

__all__ = [
    "HISTORY_COLUMNS", "PAPER_BETAS", "AttentionMap", "DistillConfig", "DistillResult",
    "attention_loss", "attention_map", "attention_vectors", "check_taps", "class_logits",
    "default_taps", "distill_loss_fn", "distill_train", "finetune", "soft_box_loss",
    "soft_class_loss", "student_boxes_at", "total_distill_loss",
]
