"""Hoeffding-type sample sizes for epsilon-delta evaluation and optimisation guarantees.

All three calculators take ``q_d``, the width of the range of recourse
values, as an input.  :func:`stochnet.twostage.recourse_range` computes it
exactly for a fixed allocation on enumerable networks and
:func:`stochnet.twostage.recourse_range_bound` gives a crude bound valid for
every allocation.  Each formula keeps its own constant, so the fixed-``x``
bound is not the ``|X| = 1`` case of the finite-space bound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class DegenerateBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BoundQuery:
    q_d: float
    epsilon: float
    delta: float
    x_space_size: int | None = None
    n_dim: float | None = None
    d_box: float | None = None
    lipschitz_K: float | None = None

    def __post_init__(self) -> None:
        if not (self.q_d > 0 and math.isfinite(self.q_d)):
            raise ValueError("q_d must be a positive finite number")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def _ceil(v: float) -> int:
    return int(math.ceil(v))


def theorem1_bound(q: BoundQuery) -> int:
    """Samples for ``P(|Q_N(x) - Q(x)| >= eps) <= delta`` at one fixed ``x``.

    ``N >= q_d^2 / (2 eps^2) * ln(2 / delta)``
    """
    return _ceil(q.q_d**2 / (2 * q.epsilon**2) * math.log(2 / q.delta))


def theorem2_bound(q: BoundQuery) -> int:
    """Samples making the SAA optimum eps-optimal w.p. ``1 - delta`` over a finite space.

    ``N >= 2 q_d^2 / eps^2 * ln(2 |X| / delta)``
    """
    if q.x_space_size is None:
        raise ValueError("x_space_size is required")
    if q.x_space_size < 1:
        raise ValueError("x_space_size must be at least 1")
    return _ceil(2 * q.q_d**2 / q.epsilon**2 * math.log(2 * q.x_space_size / q.delta))


def theorem3_bound(q: BoundQuery) -> int:
    """Same guarantee over the box ``[0, d]^n`` for a ``K``-Lipschitz objective.

    ``N >= 8 q_d^2 / eps^2 * [n ln(2 d K / eps) + ln(2 / delta)]``

    When ``2 d K / eps <= 1`` the grid term turns nonpositive; it is then
    dropped (with a :class:`DegenerateBoundWarning`) and the result is never
    below :func:`theorem1_bound`.
    """
    for name in ("n_dim", "d_box", "lipschitz_K"):
        if getattr(q, name) is None:
            raise ValueError(f"{name} is required")
    if q.n_dim < 0:
        raise ValueError("n_dim must be nonnegative")
    if q.d_box <= 0 or q.lipschitz_K <= 0:
        raise ValueError("d_box and lipschitz_K must be positive")
    grid = math.log(2 * q.d_box * q.lipschitz_K / q.epsilon)
    if grid <= 0 and q.n_dim > 0:
        warnings.warn(
            f"2*d*K/eps = {2 * q.d_box * q.lipschitz_K / q.epsilon:g} <= 1; grid term dropped",
            DegenerateBoundWarning,
            stacklevel=2,
        )
        grid = 0.0
    n = _ceil(8 * q.q_d**2 / q.epsilon**2 * (q.n_dim * grid + math.log(2 / q.delta)))
    return max(n, theorem1_bound(q))
