"""Three binary variables Z -> X -> Y <- Z, enumerated exactly.

The default instance is the counterexample where the observational
log-likelihood strictly exceeds the interventional one, which is why fully
joint ELBO training recovers ``p(y | x)`` instead of ``p(y | do(x))``.
"""

from dataclasses import dataclass
from itertools import product
import math

import numpy as np


@dataclass(frozen=True)
class DiscreteScm:
    """Bernoulli parameters. ``p_x_given_z[z] = P(X=1 | z)``, ``p_y_given_xz[x][z] = P(Y=1 | x, z)``."""

    p_z: float = 0.5
    p_x_given_z: tuple = (0.5, 0.75)
    p_y_given_xz: tuple = ((0.75, 0.5), (0.5, 0.5))

    def __post_init__(self):
        object.__setattr__(self, "p_x_given_z", tuple(self.p_x_given_z))
        object.__setattr__(self, "p_y_given_xz", tuple(tuple(r) for r in self.p_y_given_xz))
        flat = [self.p_z, *self.p_x_given_z, *(p for r in self.p_y_given_xz for p in r)]
        if len(self.p_x_given_z) != 2 or any(len(r) != 2 for r in self.p_y_given_xz) or len(
            self.p_y_given_xz
        ) != 2:
            raise ValueError("p_x_given_z needs 2 entries and p_y_given_xz a 2x2 table")
        if any(not (0 <= p <= 1) for p in flat):
            raise ValueError("all probabilities must lie in [0, 1]")


def _bern(p, v):
    return p if v else 1 - p


def exact_joint(scm):
    """``P(x, y, z)`` as a ``(2, 2, 2)`` array indexed ``[x, y, z]``."""
    table = np.zeros((2, 2, 2))
    for x, y, z in product((0, 1), repeat=3):
        table[x, y, z] = (
            _bern(scm.p_z, z) * _bern(scm.p_x_given_z[z], x) * _bern(scm.p_y_given_xz[x][z], y)
        )
    return table


def _xlogy(p, q):
    # 0 * log 0 = 0
    return 0.0 if p == 0 else p * math.log(q)


def observational_conditional(scm):
    """``P(y | x)`` as a ``[x, y]`` table; rows with ``P(x) = 0`` are left at 0."""
    pxy = exact_joint(scm).sum(axis=2)
    px = pxy.sum(axis=1, keepdims=True)
    return np.divide(pxy, px, out=np.zeros_like(pxy), where=px > 0)


def interventional_conditional(scm):
    """``P(y | do(x)) = sum_z P(z) P(y | x, z)`` as an ``[x, y]`` table."""
    out = np.zeros((2, 2))
    for x, y, z in product((0, 1), repeat=3):
        out[x, y] += _bern(scm.p_z, z) * _bern(scm.p_y_given_xz[x][z], y)
    return out


def _expected_log(scm, cond):
    pxy = exact_joint(scm).sum(axis=2)
    return float(sum(_xlogy(pxy[x, y], cond[x, y]) for x, y in product((0, 1), repeat=2)))


def expected_log_observational(scm):
    """``E_{p(x,y)} log p(y | x)`` in nats."""
    return _expected_log(scm, observational_conditional(scm))


def expected_log_interventional(scm):
    """``E_{p(x,y)} log p(y | do(x))`` in nats."""
    return _expected_log(scm, interventional_conditional(scm))


def default_closed_forms():
    """Closed-form expectations for the default SCM, as ``(observational, interventional)``."""
    obs = math.log(1 / 3) / 8 + math.log(2 / 3) / 4 + 5 * math.log(1 / 2) / 8
    do = math.log(3 / 8) / 8 + math.log(5 / 8) / 4 + 5 * math.log(1 / 2) / 8
    return obs, do
