"""
Controller objects consumed by the simulator.
Each controller maps a (possibly noisy) state measurement to an input.
Gain-based controllers keep a per-run gain cache honoring `resolve_every`.
"""

from abc import ABC, abstractmethod
from typing import Callable, Optional, Tuple

import numpy as np

from src.logger import logger
from src.models import ControllerKind, CostWeights, GainSolution, NoiseSpec, PlantModel, WeightSchedule
from src.synthesis import Synthesizer, synthesizer as default_synthesizer
from src.value_approx import approx_control


FeedbackLaw = Callable[[np.ndarray], np.ndarray]


class MissingSchedule(ValueError):
    """An approximate controller was requested without a trained schedule."""
    pass


class Controller(ABC):
    """Base controller: compute(x) returns (u, K or None)."""

    kind: Optional[ControllerKind] = None

    def __init__(self, plant: PlantModel):
        self.plant = plant

    def reset(self) -> None:
        """Drop any per-run state."""

    @abstractmethod
    def compute(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Input for measured state x, plus the gain used (if any)."""

    @abstractmethod
    def law(self) -> FeedbackLaw:
        """
        Feedback law between samples, with whatever compute() fixed held.

        Evaluated by continuous-feedback integrators at intermediate states.
        """


class ZeroController(Controller):
    """u = 0."""

    def compute(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return np.zeros(self.plant.dim_input), None

    def law(self) -> FeedbackLaw:
        zeros = np.zeros(self.plant.dim_input)
        return lambda z: zeros


class GainController(Controller):
    """State feedback u = K(x) x with K re-solved every `resolve_every` calls."""

    def __init__(
        self,
        plant: PlantModel,
        weights: CostWeights,
        synth: Optional[Synthesizer] = None,
        resolve_every: int = 1,
    ):
        super().__init__(plant)
        self.weights = weights
        self.synth = synth or default_synthesizer
        self.resolve_every = max(1, resolve_every)
        self.last_solution: Optional[GainSolution] = None
        self._calls = 0
        self._k_gain: Optional[np.ndarray] = None

    def reset(self) -> None:
        self._calls = 0
        self._k_gain = None
        self.last_solution = None

    @abstractmethod
    def solve(self, x: np.ndarray) -> GainSolution:
        """Synthesize the gain at x."""

    def compute(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        if self._k_gain is None or self._calls % self.resolve_every == 0:
            self.last_solution = self.solve(x)
            self._k_gain = self.last_solution.k_gain
        self._calls += 1
        return self._k_gain @ x, self._k_gain

    def law(self) -> FeedbackLaw:
        if self._k_gain is None:
            raise RuntimeError("law() called before compute()")
        k_gain = self._k_gain
        return lambda z: k_gain @ z


class SdreController(GainController):
    kind = ControllerKind.SDRE

    def solve(self, x: np.ndarray) -> GainSolution:
        return self.synth.sdre_gain(self.plant.sdc(x), self.weights)


class H2HinfController(GainController):
    kind = ControllerKind.H2HINF

    def solve(self, x: np.ndarray) -> GainSolution:
        return self.synth.h2hinf_gain(self.plant.sdc(x), self.weights)


class RnqgController(GainController):
    kind = ControllerKind.RNQG

    def __init__(self, plant: PlantModel, weights: CostWeights, noise: NoiseSpec,
                 synth: Optional[Synthesizer] = None, resolve_every: int = 1):
        super().__init__(plant, weights, synth, resolve_every)
        self.noise = noise

    def solve(self, x: np.ndarray) -> GainSolution:
        return self.synth.rnqg_gain(self.plant.sdc(x), self.weights, self.noise)


class ApproxController(Controller):
    """
    u = -(2 R(x))^-1 B(x)^T grad V(x) from a trained schedule.

    The factor 2 matches the minimand's u^T (R/2) u convention to the
    stage cost u^T R u used in training.
    """

    def __init__(
        self,
        plant: PlantModel,
        schedule: WeightSchedule,
        r_of_x: Callable[[np.ndarray], np.ndarray],
        kind: ControllerKind = ControllerKind.SDRE_APPROX,
        b_of_x: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        super().__init__(plant)
        self.schedule = schedule
        self.kind = kind
        self._r_of_x = r_of_x
        self._b_of_x = b_of_x or (lambda x: plant.sdc(x).b_mat)
        if not schedule.converged:
            logger.warning("Approximate controller uses an unconverged schedule", kind=kind.value)

    def _control(self, x: np.ndarray) -> np.ndarray:
        return approx_control(x, self.schedule, lambda z: 2.0 * self._r_of_x(z), self._b_of_x)

    def compute(self, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return self._control(x), None

    def law(self) -> FeedbackLaw:
        return self._control


def build_controller(
    kind: ControllerKind,
    plant: PlantModel,
    weights: CostWeights,
    noise: NoiseSpec,
    synth: Optional[Synthesizer] = None,
    schedule: Optional[WeightSchedule] = None,
    resolve_every: int = 1,
    r_of_x: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Controller:
    """
    Controller factory.

    Args:
        kind: Controller scheme
        plant, weights, noise: Problem data
        synth: Synthesizer carrying solver tolerances
        schedule: Trained schedule (approximate kinds only)
        resolve_every: Steps between gain re-solves
        r_of_x: Input weight used by approximate kinds (defaults to weights.r_of_x)

    Raises:
        MissingSchedule: approximate kind without a schedule
    """
    kind = ControllerKind(kind)
    if kind == ControllerKind.SDRE:
        return SdreController(plant, weights, synth, resolve_every)
    if kind == ControllerKind.H2HINF:
        return H2HinfController(plant, weights, synth, resolve_every)
    if kind == ControllerKind.RNQG:
        return RnqgController(plant, weights, noise, synth, resolve_every)

    if schedule is None:
        raise MissingSchedule(
            f"controller '{kind.value}' needs a trained weight schedule; run `train` first"
        )
    return ApproxController(plant, schedule, r_of_x or weights.r_of_x, kind)
