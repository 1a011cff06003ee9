"""Group channel pruning: budgets, masks, voting, graph surgery."""
from .io import REPORT_COLUMNS, format_masks, read_masks, report_rows, write_masks, write_prune_report
from .masks import MaskSet, build_masks, finalize_masks, vote_public_mask
from .plan import MODES, GroupPlan, PruneError, PrunePlan, largest_remainder, plan_thresholds
from .surgery import (SurgeryError, apply_surgery, masked_weights, propagate_keep,
                      verify_equivalence)


def prune(g, weights, gammas, P: float, mode: str = "proportional", explicit_ratios=None):
    """Plan, mask, vote and cut in one call; returns ``(plan, pre, masks, graph, weights)``."""
    plan = plan_thresholds(g, gammas, P, mode, explicit_ratios)
    pre = build_masks(g, gammas, plan)
    masks = finalize_masks(g, pre, gammas)
    pg, pw = apply_surgery(g, weights, masks)
    return plan, pre, masks, pg, pw


__all__ = [
    "MODES", "REPORT_COLUMNS", "GroupPlan", "MaskSet", "PruneError", "PrunePlan", "SurgeryError",
    "apply_surgery", "build_masks", "finalize_masks", "format_masks", "largest_remainder",
    "masked_weights", "plan_thresholds", "propagate_keep", "prune", "read_masks", "report_rows",
    "verify_equivalence", "vote_public_mask", "write_masks", "write_prune_report",
]
