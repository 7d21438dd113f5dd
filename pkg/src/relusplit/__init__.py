"""Input-splitting verification of ReLU networks guided by LP shadow prices."""

from .network import InputBox, ReluNetwork, forward, load_nnet, save_nnet
from .lp import LinearProgram, LpSolution, Sense, Status, solve
from .relaxation import BoundsTable, compute_bounds, is_exact, output_polytope
from .rates import BoundRates, bound_rates
from .splitting import DegenerateBox, SplitDecision, be_split, iog_split
from .verifier import OutputSpec, Verdict, VerificationOutcome, VerifyConfig, verify, verify_boxes

__version__ = "0.1.0"

__all__ = [
    "InputBox", "ReluNetwork", "forward", "load_nnet", "save_nnet",
    "LinearProgram", "LpSolution", "Sense", "Status", "solve",
    "BoundsTable", "compute_bounds", "is_exact", "output_polytope",
    "BoundRates", "bound_rates",
    "DegenerateBox", "SplitDecision", "be_split", "iog_split",
    "OutputSpec", "Verdict", "VerificationOutcome", "VerifyConfig", "verify", "verify_boxes",
]
