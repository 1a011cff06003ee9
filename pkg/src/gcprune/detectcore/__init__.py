"""Detection scaffolding: synthetic data, anchor decoding, matching, hard loss, mAP."""
from .anchors import anchors_per_scale, default_anchors, kmeans_anchors
from .boxes import BoxLabel, Detection, box_iou, iou, iou_xyxy, wh_iou
from .dataset import (SHAPES, Dataset, gen_dataset, iterate_batches, load_dataset, read_ppm,
                      save_dataset, to_input, write_ppm)
from .decode import DecodedScale, decode_predictions, decode_scale, match_candidates, nms, split_head
from .loss import HardLossWeights, Targets, build_targets, hard_loss, positive_rows
from .metrics import MapResult, average_precision, eval_map

__all__ = [
    "SHAPES", "BoxLabel", "Dataset", "DecodedScale", "Detection", "HardLossWeights", "MapResult",
    "Targets", "anchors_per_scale", "average_precision", "box_iou", "build_targets",
    "decode_predictions", "decode_scale", "default_anchors", "eval_map", "gen_dataset", "hard_loss",
    "iou", "iou_xyxy", "iterate_batches", "kmeans_anchors", "load_dataset", "match_candidates", "nms",
    "positive_rows", "read_ppm", "save_dataset", "split_head", "to_input", "wh_iou", "write_ppm",
]
