"""Numerical laboratory for Brunn-Minkowski inequalities on Lie groups."""

__version__ = "0.1.0"

from .groups import (ChartDomainError, DimensionProfile, Element, GroupChart, catalog, haar_left_density,
                     haar_right_density, modular_value, parse_group)
from .cells import CellSet, from_box, measure, product_set, product_set_inner, refine, union
from .bm import BMReport, bm_lhs, check_bm, holder_norm
from .fiber import FiberProfile, FiberSplit, fiber_profile, scale_deficit
from .dimcalc import eval_profile, parse_expr

__all__ = [
    "ChartDomainError", "DimensionProfile", "Element", "GroupChart", "catalog", "haar_left_density",
    "haar_right_density", "modular_value", "parse_group", "CellSet", "from_box", "measure", "product_set",
    "product_set_inner", "refine", "union", "BMReport", "bm_lhs", "check_bm", "holder_norm",
    "FiberProfile", "FiberSplit", "fiber_profile", "scale_deficit", "eval_profile", "parse_expr",
]
