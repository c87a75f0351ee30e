from .curve_math import CurveParams, CurveRegistry, KeyPair, Point, curve_for_strength
from .entities import bootstrap, hospital_receive, request_pseudonyms, send_reading
from .errors import PkiError
from .harness import bench, emit_report, run_scenario
from .rng import DeterministicRandomSource, SystemRandomSource

__all__ = [
    "CurveParams",
    "CurveRegistry",
    "DeterministicRandomSource",
    "KeyPair",
    "PkiError",
    "Point",
    "SystemRandomSource",
    "bench",
    "bootstrap",
    "curve_for_strength",
    "emit_report",
    "hospital_receive",
    "request_pseudonyms",
    "run_scenario",
    "send_reading",
]
