"""
Correlations - two-meter spin correlations, the CHSH functional and
per-trial sampling of the singlet and of the "one by one" mixture.

The mixture hypothesis treats each dissociated pair as being in exactly one of
|+>|-> or |->|+>, each with probability 1/2, so its correlation is the
equal-weight average of the two product-state correlations.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple
import logging
import math

import numpy as np
import pandas as pd

from workbench import random_streams
from workbench.spin_algebra import (
    KET_MINUS,
    KET_PLUS,
    Direction,
    eigen,
    expectation,
    matrix_element,
    singlet,
    spin_along,
    tensor,
)

logger = logging.getLogger(__name__)

CORRELATION_TOL = 1e-12

# Trial labels: which product state the pair was in (mixture only).
LABEL_PM = "PM"
LABEL_MP = "MP"
LABEL_NA = "NA"


@dataclass(frozen=True)
class MeterSettings:
    """The four meter orientations a, a', b, b' entering the CHSH functional."""

    a: Direction
    a_prime: Direction
    b: Direction
    b_prime: Direction

    def directions(self) -> Tuple[Direction, Direction, Direction, Direction]:
        return (self.a, self.a_prime, self.b, self.b_prime)

    def is_coplanar(self, tol: float = 1e-12) -> bool:
        """True when all four vectors lie in the xz-plane (phi = 0 plane)."""
        return all(abs(d.y) <= tol for d in self.directions())


def singlet_correlation(a: Direction, b: Direction) -> float:
    """<Psi_S| sigma_a (x) sigma_b |Psi_S> by the 4x4 expectation."""
    return expectation(singlet(), tensor(spin_along(a), spin_along(b)))


def _diagonal_products(a: Direction, b: Direction) -> Tuple[complex, complex]:
    sa, sb = spin_along(a), spin_along(b)
    pm = matrix_element(KET_PLUS, sa, KET_PLUS) * matrix_element(KET_MINUS, sb, KET_MINUS)
    mp = matrix_element(KET_MINUS, sa, KET_MINUS) * matrix_element(KET_PLUS, sb, KET_PLUS)
    return pm, mp


def mixture_correlation(a: Direction, b: Direction) -> float:
    """
    1/2 [<+|s_a|+><-|s_b|-> + <-|s_a|-><+|s_b|+>], equal to -cos(theta_a) cos(theta_b)
    for coplanar settings.
    """
    pm, mp = _diagonal_products(a, b)
    return float((0.5 * (pm + mp)).real)


def mixture_correlation_as_printed(a: Direction, b: Direction) -> float:
    """The mixture average with <+|s_b|+> in both terms; identically zero."""
    sa, sb = spin_along(a), spin_along(b)
    plus_b = matrix_element(KET_PLUS, sb, KET_PLUS)
    value = 0.5 * (
        matrix_element(KET_PLUS, sa, KET_PLUS) * plus_b
        + matrix_element(KET_MINUS, sa, KET_MINUS) * plus_b
    )
    return float(value.real)


def interference_terms(a: Direction, b: Direction) -> float:
    """
    1/2 [<+|s_a|-><-|s_b|+> + <-|s_a|+><+|s_b|->].

    singlet_correlation = mixture_correlation - interference_terms.
    """
    sa, sb = spin_along(a), spin_along(b)
    cross = (
        matrix_element(KET_PLUS, sa, KET_MINUS) * matrix_element(KET_MINUS, sb, KET_PLUS)
        + matrix_element(KET_MINUS, sa, KET_PLUS) * matrix_element(KET_PLUS, sb, KET_MINUS)
    )
    return float((0.5 * cross).real)


def singlet_expansion_terms(a: Direction, b: Direction) -> Tuple[complex, complex, complex, complex]:
    """
    The four signed terms of the singlet expectation in the |+>, |-> basis:
    1/2 <+|s_a|+><-|s_b|->, -1/2 <+|s_a|-><-|s_b|+>, -1/2 <-|s_a|+><+|s_b|->,
    1/2 <-|s_a|-><+|s_b|+>. Their sum is singlet_correlation(a, b).
    """
    sa, sb = spin_along(a), spin_along(b)
    p, m = KET_PLUS, KET_MINUS
    return (
        0.5 * matrix_element(p, sa, p) * matrix_element(m, sb, m),
        -0.5 * matrix_element(p, sa, m) * matrix_element(m, sb, p),
        -0.5 * matrix_element(m, sa, p) * matrix_element(p, sb, m),
        0.5 * matrix_element(m, sa, m) * matrix_element(p, sb, p),
    )


class CorrelationModel(str, Enum):
    """Tagged choice between the singlet and the mixture correlation maps."""

    SINGLET = "singlet"
    MIXTURE = "mixture"

    def correlation(self, a: Direction, b: Direction) -> float:
        if self is CorrelationModel.SINGLET:
            value = singlet_correlation(a, b)
        else:
            value = mixture_correlation(a, b)
        if abs(value) > 1.0 + CORRELATION_TOL:
            raise ValueError(f"{self.value} correlation {value} outside [-1, 1]")
        return value


def chsh(model: CorrelationModel, s: MeterSettings) -> float:
    """|P(a,b) - P(a,b')| + |P(a',b') + P(a',b)|."""
    P = model.correlation
    return abs(P(s.a, s.b) - P(s.a, s.b_prime)) + abs(P(s.a_prime, s.b_prime) + P(s.a_prime, s.b))


def bell_config(theta: float) -> MeterSettings:
    """
    Coplanar settings with angle(a,b') = 2 theta, angle(b,a') = 0 and
    angle(b,b') = angle(a,a') = theta: a at 0, b = a' at theta, b' at 2 theta
    in the xz-plane.
    """
    if not (0.0 <= theta < 2.0 * math.pi):
        raise ValueError(f"theta must lie in [0, 2 pi), got {theta}")
    a = Direction.from_angles(0.0)
    b = Direction.from_angles(theta)
    return MeterSettings(a=a, a_prime=b, b=b, b_prime=Direction.from_angles(2.0 * theta))


def mixture_lhs(theta: float) -> float:
    """|cos 2t - cos t| + |cos t| |cos 2t + cos t|."""
    c1, c2 = math.cos(theta), math.cos(2.0 * theta)
    return abs(c2 - c1) + abs(c1) * abs(c2 + c1)


def chsh_scan(theta_steps: int) -> pd.DataFrame:
    """CHSH of both models over theta_k = 2 pi k / theta_steps."""
    if theta_steps < 1:
        raise ValueError("theta_steps must be at least 1")
    rows = []
    for k in range(theta_steps):
        theta = 2.0 * math.pi * k / theta_steps
        settings = bell_config(theta)
        rows.append(
            {
                "theta": theta,
                "singlet": chsh(CorrelationModel.SINGLET, settings),
                "mixture": chsh(CorrelationModel.MIXTURE, settings),
                "mixture_lhs": mixture_lhs(theta),
            }
        )
    return pd.DataFrame(rows, columns=["theta", "singlet", "mixture", "mixture_lhs"])


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    label: str
    A: int
    B: int
    a: Direction
    b: Direction


@dataclass(frozen=True, eq=False)
class TrialSample:
    """Outcome arrays of a sampling run plus the estimate of mean(A*B)."""

    model: CorrelationModel
    a: Direction
    b: Direction
    labels: np.ndarray
    outcomes_a: np.ndarray
    outcomes_b: np.ndarray
    correlation: float
    stderr: float

    @property
    def n(self) -> int:
        return int(self.outcomes_a.size)

    def records(self) -> List[TrialRecord]:
        return [
            TrialRecord(i, str(label), int(A), int(B), self.a, self.b)
            for i, (label, A, B) in enumerate(zip(self.labels, self.outcomes_a, self.outcomes_b))
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "trial": np.arange(self.n),
                "label": self.labels,
                "A": self.outcomes_a,
                "B": self.outcomes_b,
            }
        )


def _plus_probability(direction: Direction, ket: np.ndarray) -> float:
    """Born probability of +1 for sigma_direction on a single-spin ket."""
    (_, up), _ = eigen(spin_along(direction))
    return float(abs(np.vdot(up, ket)) ** 2)


def _singlet_joint_probabilities(a: Direction, b: Direction) -> np.ndarray:
    """P(A, B) over (++, +-, -+, --) from the projectors of sigma_a (x) sigma_b."""
    psi = singlet()
    probabilities = []
    for _, va in eigen(spin_along(a)):
        for _, vb in eigen(spin_along(b)):
            amplitude = np.vdot(np.kron(va, vb), psi)
            probabilities.append(abs(amplitude) ** 2)
    p = np.array(probabilities)
    return p / p.sum()


def sample_trials(
    model: CorrelationModel,
    a: Direction,
    b: Direction,
    n: int,
    seed: int,
    threads: int = 1,
    block_size: int | None = None,
) -> TrialSample:
    """
    Draw n measurement trials one by one.

    Singlet: (A, B) from the Born distribution of sigma_a (x) sigma_b on the
    singlet. Mixture: first the pair's product state (PM or MP, probability
    1/2 each), then A and B independently from each particle's marginal.

    Args:
        model: CorrelationModel or its name ("singlet", "mixture")
        a: Setting of meter A
        b: Setting of meter B
        n: Number of trials
        seed: Run seed; uniforms come from the trials stream
        threads: Worker threads for drawing uniforms
        block_size: Draws per stream block

    Returns:
        TrialSample with per-trial outcomes and pair labels
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    model = CorrelationModel(model)
    u = random_streams.uniforms(seed, random_streams.STREAM_TRIALS, n, 3,
                                threads=threads, block_size=block_size)

    if model is CorrelationModel.SINGLET:
        cumulative = np.cumsum(_singlet_joint_probabilities(a, b))
        outcome = np.minimum(np.searchsorted(cumulative, u[:, 0], side="right"), 3)
        outcomes_a = np.where(outcome < 2, 1, -1)
        outcomes_b = np.where(outcome % 2 == 0, 1, -1)
        labels = np.full(n, LABEL_NA)
    else:
        pm = u[:, 0] < 0.5
        pa_pm, pb_pm = _plus_probability(a, KET_PLUS), _plus_probability(b, KET_MINUS)
        pa_mp, pb_mp = _plus_probability(a, KET_MINUS), _plus_probability(b, KET_PLUS)
        outcomes_a = np.where(u[:, 1] < np.where(pm, pa_pm, pa_mp), 1, -1)
        outcomes_b = np.where(u[:, 2] < np.where(pm, pb_pm, pb_mp), 1, -1)
        labels = np.where(pm, LABEL_PM, LABEL_MP)

    products = (outcomes_a * outcomes_b).astype(float)
    estimate = float(products.mean())
    stderr = float(products.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    logger.info(f"Sampled {n} {model.value} trials: P = {estimate:.6f} +/- {stderr:.2e}")

    return TrialSample(
        model=model,
        a=a,
        b=b,
        labels=labels,
        outcomes_a=outcomes_a.astype(int),
        outcomes_b=outcomes_b.astype(int),
        correlation=estimate,
        stderr=stderr,
    )
