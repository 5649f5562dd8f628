"""Online delay-robust MPC synthesis for interval type-2 fuzzy systems."""
from .it2 import (FuzzyRule, GaussianGrade, It2ControllerShape, It2MembershipFn, It2Plant,
                  Premise, TriangularGrade, firing_strengths, controller_strengths)
from .synth import SynthConfig, HistoryWindow, SynthesisSolution, solve_step
from .sim import DelayProcess, SimConfig, Trajectory, run, uncontrolled_run

__version__ = "0.1.0"
