"""Step sizes and relaxation schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .errors import InvalidGamma, InvalidParams
from .game import GameConstants, GameInstance
from .operators import Preconditioner, require_positive_definite


@dataclass(frozen=True)
class PowerLaw:
    """gamma^k = (k + 1)^(-exponent)."""

    exponent: float

    def __call__(self, k: int) -> float:
        return float((k + 1.0) ** -self.exponent)

    def values(self, count: int) -> np.ndarray:
        return (np.arange(count, dtype=float) + 1.0) ** -self.exponent

    def label(self) -> str:
        return f"pow:{self.exponent:g}"


@dataclass(frozen=True)
class Constant:
    """gamma^k = value."""

    value: float

    def __call__(self, k: int) -> float:
        return float(self.value)

    def values(self, count: int) -> np.ndarray:
        return np.full(count, float(self.value))

    def label(self) -> str:
        return f"const:{self.value:g}"


@dataclass(frozen=True)
class Custom:
    """Explicit values; the last one repeats past the end of the list."""

    sequence: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.sequence:
            raise InvalidGamma("a custom relaxation schedule needs at least one value")
        object.__setattr__(self, "sequence", tuple(float(v) for v in self.sequence))

    def __call__(self, k: int) -> float:
        return self.sequence[min(k, len(self.sequence) - 1)]

    def values(self, count: int) -> np.ndarray:
        head = np.asarray(self.sequence[:count], dtype=float)
        return np.concatenate([head, np.full(max(count - head.size, 0), self.sequence[-1])])

    def label(self) -> str:
        return "custom"


GammaSpec = Union[PowerLaw, Constant, Custom]


def parse_gamma(text: str) -> GammaSpec:
    """Parses ``pow:B`` or ``const:V``."""
    kind, _, raw = text.partition(":")
    try:
        value = float(raw)
    except ValueError:
        raise InvalidGamma(f"cannot parse relaxation schedule {text!r}; use pow:B or const:V") from None
    if kind == "pow":
        return PowerLaw(value)
    if kind == "const":
        return Constant(value)
    raise InvalidGamma(f"unknown relaxation schedule kind {kind!r}; use pow:B or const:V")


def gamma_to_dict(spec: GammaSpec) -> dict[str, Any]:
    if isinstance(spec, PowerLaw):
        return {"kind": "pow", "exponent": spec.exponent}
    if isinstance(spec, Constant):
        return {"kind": "const", "value": spec.value}
    return {"kind": "custom", "sequence": list(spec.sequence)}


def gamma_from_dict(doc: dict[str, Any]) -> GammaSpec:
    kind = doc.get("kind")
    if kind == "pow":
        return PowerLaw(float(doc["exponent"]))
    if kind == "const":
        return Constant(float(doc["value"]))
    if kind == "custom":
        return Custom(tuple(doc["sequence"]))
    raise InvalidGamma(f"unknown relaxation schedule kind {kind!r}")


def validate_gamma(spec: GammaSpec, nu: float) -> None:
    """Checks a schedule against the averagedness constant nu.

    Raises:
        InvalidGamma: For a power law outside (1/2, 1], or a value outside [0, 1/nu].
    """
    if isinstance(spec, PowerLaw):
        if not 0.5 < spec.exponent <= 1.0:
            raise InvalidGamma(
                f"power-law exponent {spec.exponent:g} must lie in (1/2, 1] so that the relaxation "
                "sequence is non-summable but square-summable"
            )
        return
    values = np.asarray(spec.sequence if isinstance(spec, Custom) else (spec.value,), dtype=float)
    if np.any(values < 0) or np.any(values > 1.0 / nu + 1e-12):
        raise InvalidGamma(f"relaxation values must lie in [0, 1/nu] = [0, {1.0 / nu:.6g}]")


def require_diminishing(spec: GammaSpec, unsafe: bool = False) -> None:
    """Tracking runs need a non-increasing, square-summable schedule bounded by 1.

    ``unsafe`` admits any validated schedule, such as a constant 1.
    """
    if unsafe or isinstance(spec, PowerLaw):
        return
    if isinstance(spec, Constant):
        if spec.value == 0.0:
            return
        raise InvalidGamma(
            "a constant relaxation is not square-summable; tracking runs need a diminishing "
            "schedule such as pow:0.51 (pass unsafe_gamma to override)"
        )
    values = np.asarray(spec.sequence)
    if np.any(np.diff(values) > 0) or values[0] > 1.0:
        raise InvalidGamma("tracking runs need a non-increasing relaxation schedule bounded by 1")


@dataclass(frozen=True, eq=False)
class StepPlan:
    """Per-agent steps, the relaxation schedule and the constants behind them.

    Attributes:
        alpha: Primal steps alpha_i.
        beta: Dual steps beta_i for the per-agent multiplier copies.
        gamma: Relaxation schedule.
        tau: Eigenvalue target of the preconditioner.
        delta: Cocoercivity constant used to pick tau.
        nu: Averagedness constant of the forward-backward map.
        central_beta: Dual step of the single shared multiplier in the
            semi-decentralized iteration.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: GammaSpec
    tau: float
    delta: float
    nu: float
    central_beta: float

    def gamma_at(self, k: int) -> float:
        return self.gamma(k)

    def gamma_values(self, count: int) -> np.ndarray:
        return self.gamma.values(count)

    def preconditioner(self, game: GameInstance, check: bool = True) -> Preconditioner:
        precond = Preconditioner(self.alpha, self.beta, game.coupling, self.tau, self.delta)
        if check:
            require_positive_definite(precond)
        return precond

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": gamma_to_dict(self.gamma),
            "tau": self.tau,
            "delta": self.delta,
            "nu": self.nu,
            "central_beta": self.central_beta,
        }


def make_step_plan(
    game_constants: GameConstants,
    tau_margin: float = 0.05,
    gamma_spec: GammaSpec = PowerLaw(0.51),
    *,
    alpha_scale: float = 1.0,
) -> StepPlan:
    """Steps at their upper bounds for tau = (1 + tau_margin) / (2 delta).

    alpha_i = 1/(||C_i|| + tau), beta_i = 1/(mean_j ||C_j|| + tau) and, for the
    shared multiplier, beta = 1/(sum_j ||C_j|| + tau). ``alpha_scale`` shrinks
    or inflates the primal steps, e.g. for falsification runs.

    Raises:
        InvalidGamma: If the schedule is inadmissible.
    """
    if tau_margin < 0:
        raise InvalidParams("tau_margin must be non-negative")
    gc = game_constants
    tau = (1.0 + tau_margin) * gc.tau_min
    norms = np.asarray(gc.coupling_norms, dtype=float)
    nu = 2.0 * gc.delta * tau / (4.0 * gc.delta * tau - 1.0)
    validate_gamma(gamma_spec, nu)
    return StepPlan(
        alpha=alpha_scale / (norms + tau),
        beta=np.full(norms.size, 1.0 / (gc.coupling_norm_mean + tau)),
        gamma=gamma_spec,
        tau=tau,
        delta=gc.delta,
        nu=nu,
        central_beta=1.0 / (norms.sum() + tau),
    )


def km_step(current: np.ndarray, candidate: np.ndarray, gamma: float) -> np.ndarray:
    """current + gamma (candidate - current)."""
    return current + gamma * (candidate - current)
