"""
Local Hidden-Variable Models

A model is a hidden-variable sampler plus two bounded response functions
A(a, lambda) and B(b, lambda). The correlation P(a, b) is the Monte Carlo
mean of A*B over lambda draws; the sampler is a probability sampler, so the
normalization of rho(lambda) holds by construction.

Hidden values are opaque to everything except the model that made them; they
travel as row-stacked arrays so a whole block is evaluated at once.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional
import logging
import math

import numpy as np
import pandas as pd

from workbench import random_streams
from workbench.correlations import MeterSettings, mixture_correlation
from workbench.errors import ConstraintViolation
from workbench.spin_algebra import Direction

logger = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator, int], np.ndarray]
Response = Callable[[Direction, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LHVModel:
    name: str
    sample: Sampler
    response_a: Response
    response_b: Response
    closed_form: Optional[Callable[[Direction, Direction], float]] = None
    description: str = ""


class Estimate(NamedTuple):
    mean: float
    stderr: float


def _check_bounds(model: LHVModel, side: str, values: np.ndarray, hidden: np.ndarray) -> None:
    bad = np.flatnonzero(~(np.abs(values) <= 1.0))
    if bad.size:
        i = int(bad[0])
        raise ConstraintViolation(
            f"Model '{model.name}' response {side} = {values[i]} violates |{side}| <= 1 "
            f"at hidden value {hidden[i].tolist()}",
            hidden_value=hidden[i].tolist(),
            response=float(values[i]),
        )


def _products(model: LHVModel, pairs, seed: int, n: int, threads: int,
              block_size: Optional[int]) -> List[np.ndarray]:
    """A(a,lambda) B(b,lambda) for each (a, b) in pairs over the same n draws."""

    def block(k: int, start: int, stop: int) -> np.ndarray:
        rng = random_streams.block_generator(seed, random_streams.STREAM_LHV, k)
        hidden = model.sample(rng, stop - start)
        columns = []
        for a, b in pairs:
            A = np.asarray(model.response_a(a, hidden), dtype=float)
            B = np.asarray(model.response_b(b, hidden), dtype=float)
            _check_bounds(model, "A", A, hidden)
            _check_bounds(model, "B", B, hidden)
            columns.append(A * B)
        return np.stack(columns, axis=1)

    stacked = np.concatenate(
        random_streams.run_blocks(block, n, threads=threads, block_size=block_size), axis=0
    )
    return [stacked[:, j] for j in range(len(pairs))]


def _summarize(products: np.ndarray) -> Estimate:
    n = products.size
    # the jackknife standard error of a sample mean reduces to s / sqrt(n)
    return Estimate(float(products.mean()), float(products.std(ddof=1) / math.sqrt(n)))


def estimate_correlation(model: LHVModel, a: Direction, b: Direction, n: int, seed: int,
                         threads: int = 1, block_size: Optional[int] = None) -> Estimate:
    """
    Monte Carlo estimate of the correlation P(a, b)

    Args:
        model: Hidden-variable model
        a: Setting of meter A
        b: Setting of meter B
        n: Number of hidden-variable draws (at least 2)
        seed: Run seed; draws come from the LHV stream in blocks
        threads: Worker threads; the estimate does not depend on it
        block_size: Draws per stream block (config default when None)

    Returns:
        Estimate(mean, stderr) of A(a,lambda) B(b,lambda)
    """
    if n < 2:
        raise ValueError(f"n must be at least 2 for a standard error, got {n}")
    (products,) = _products(model, [(a, b)], seed, n, threads, block_size)
    return _summarize(products)


def chsh_of_model(model: LHVModel, s: MeterSettings, n: int, seed: int,
                  threads: int = 1, block_size: Optional[int] = None) -> Estimate:
    """
    |P(a,b) - P(a,b')| + |P(a',b') + P(a',b)| from four estimates sharing one
    seed schedule; the standard error is the sum of the four.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2 for a standard error, got {n}")
    pairs = [(s.a, s.b), (s.a, s.b_prime), (s.a_prime, s.b_prime), (s.a_prime, s.b)]
    ab, abp, apbp, apb = (_summarize(p) for p in _products(model, pairs, seed, n, threads, block_size))
    value = abs(ab.mean - abp.mean) + abs(apbp.mean + apb.mean)
    return Estimate(value, ab.stderr + abp.stderr + apbp.stderr + apb.stderr)


def _uniform_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def builtin_sign_model() -> LHVModel:
    """lambda uniform on the sphere, A = sign(a.lambda), B = -sign(b.lambda)."""
    return LHVModel(
        name="sign",
        sample=_uniform_sphere,
        response_a=lambda a, lam: np.sign(lam @ a.as_array()),
        response_b=lambda b, lam: -np.sign(lam @ b.as_array()),
        closed_form=lambda a, b: -1.0 + 2.0 * a.angle_to(b) / math.pi,
        description="sign responses on a uniformly distributed unit vector",
    )


def _mixture_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    # columns: s (+1 for |+>|->, -1 for |->|+>), u1, u2
    u = rng.random((n, 3))
    s = np.where(u[:, 0] < 0.5, 1.0, -1.0)
    return np.column_stack([s, u[:, 1], u[:, 2]])


def _mixture_a(a: Direction, lam: np.ndarray) -> np.ndarray:
    # particle 1 is |+> when s = +1: P(A = +1) = (1 + s a_z) / 2
    p_plus = 0.5 * (1.0 + lam[:, 0] * a.z)
    return np.where(lam[:, 1] < p_plus, 1.0, -1.0)


def _mixture_b(b: Direction, lam: np.ndarray) -> np.ndarray:
    # particle 2 is |-> when s = +1: P(B = +1) = (1 - s b_z) / 2
    p_plus = 0.5 * (1.0 - lam[:, 0] * b.z)
    return np.where(lam[:, 2] < p_plus, 1.0, -1.0)


def builtin_mixture_model() -> LHVModel:
    """The one-pair-at-a-time product-state hypothesis written as a local model."""
    return LHVModel(
        name="mixture",
        sample=_mixture_sample,
        response_a=_mixture_a,
        response_b=_mixture_b,
        closed_form=mixture_correlation,
        description="fair product-state label with thresholded Born marginals",
    )


MODEL_REGISTRY: Dict[str, Callable[[], LHVModel]] = {
    "sign": builtin_sign_model,
    "mixture": builtin_mixture_model,
}


def get_model(name: str) -> LHVModel:
    """
    Build a registered hidden-variable model

    Args:
        name: Registry key, e.g. "sign" or "mixture"

    Returns:
        Fresh LHVModel; KeyError listing the available names when unknown
    """
    try:
        return MODEL_REGISTRY[name]()
    except KeyError:
        raise KeyError(f"Unknown LHV model '{name}'. Available: {', '.join(sorted(MODEL_REGISTRY))}")


def random_settings(seed: int, count: int) -> List[MeterSettings]:
    """count unconstrained settings with all four directions uniform on the sphere."""
    rng = random_streams.block_generator(seed, random_streams.STREAM_SETTINGS, 0)
    settings = []
    for _ in range(count):
        vectors = _uniform_sphere(rng, 4)
        a, a_prime, b, b_prime = (Direction.from_vector(v, normalize=True) for v in vectors)
        settings.append(MeterSettings(a=a, a_prime=a_prime, b=b, b_prime=b_prime))
    return settings


def correlation_curve(model: LHVModel, thetas, n: int, seed: int, threads: int = 1,
                      block_size: Optional[int] = None) -> pd.DataFrame:
    """Estimates of P(z, b(theta)) with b in the xz-plane; closed form attached when known."""
    rows = []
    a = Direction.from_angles(0.0)
    for theta in thetas:
        b = Direction.from_angles(float(theta))
        est = estimate_correlation(model, a, b, n, seed, threads=threads, block_size=block_size)
        row = {"theta": float(theta), "mean": est.mean, "stderr": est.stderr}
        if model.closed_form is not None:
            row["closed_form"] = model.closed_form(a, b)
        rows.append(row)
    return pd.DataFrame(rows)


def bound_check(model: LHVModel, count: int, n: int, seed: int, threads: int = 1,
                sigmas: float = 5.0, block_size: Optional[int] = None) -> pd.DataFrame:
    """
    CHSH over random settings, flagging any value above 2 + sigmas * stderr

    Args:
        model: Hidden-variable model under test
        count: Number of random settings
        n: Draws per CHSH estimate
        seed: Seeds both the settings stream and the estimates
        threads: Worker threads for each estimate
        sigmas: Standard errors allowed above 2
        block_size: Draws per stream block

    Returns:
        DataFrame with setting, value, stderr and within_bound columns
    """
    rows = []
    for index, settings in enumerate(random_settings(seed, count)):
        est = chsh_of_model(model, settings, n, seed, threads=threads, block_size=block_size)
        within = est.mean <= 2.0 + sigmas * est.stderr
        if not within:
            logger.warning(f"Model '{model.name}' setting {index}: CHSH {est.mean:.4f} exceeds bound")
        rows.append({"setting": index, "value": est.mean, "stderr": est.stderr, "within_bound": within})
    return pd.DataFrame(rows)
