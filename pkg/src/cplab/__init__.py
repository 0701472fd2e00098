"""Numerical laboratory for the total curvature of linear-programming central paths.

Modules
-------
core         instance data, tolerances, dense linear algebra, seeded sampling
arrangement  sign-cell enumeration and feasibility classification
centralpath  predictor-corrector tracing with first and second derivatives
curvature    Gauss curves, total curvature, Crofton estimates, crossings
bezout       multi-homogeneous Bezout numbers in exact integers
harness      surveys, reports and serialisation (CLI in ``cplab.cli``)
"""
from .arrangement import ArrangementSummary, CellReport, CellStatus, enumerate_cells
from .bezout import BezoutResult, MultiHomStructure, bezout_number, crossing_bounds, crossing_structure
from .centralpath import PathPoint, PathTrace, trace_path
from .core import LpInstance, SignVector, Tolerances, sample_instance
from .curvature import CroftonEstimate, CurvatureResult, Flavor, crofton_length, total_curvature
from .harness import ExperimentConfig, SurveyReport, run_survey

__version__ = "0.1.0"

__all__ = [
    "ArrangementSummary", "BezoutResult", "CellReport", "CellStatus", "CroftonEstimate", "CurvatureResult",
    "ExperimentConfig", "Flavor", "LpInstance", "MultiHomStructure", "PathPoint", "PathTrace", "SignVector",
    "SurveyReport", "Tolerances", "bezout_number", "crofton_length", "enumerate_cells", "crossing_bounds",
    "crossing_structure", "run_survey", "sample_instance", "total_curvature", "trace_path",
]
