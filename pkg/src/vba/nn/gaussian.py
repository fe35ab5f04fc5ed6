"""Diagonal Gaussian heads: log-density and pathwise sampling.

Both functions accept plain arrays or autodiff :class:`~vba.nn.autodiff.Tensor`
values, so the same code serves inference and training.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class GaussianHead:
    """Diagonal Gaussian with per-coordinate ``mean`` and ``std`` (last axis is d)."""

    mean: object
    std: object

    @property
    def dim(self):
        return ad.shape_of(self.mean)[-1]


def gaussian_log_density(head, value):
    """Log-density of ``value`` under ``head``, summed over the last axis.

    Leading axes broadcast, so a ``(k, n, d)`` sample block against an
    ``(n, d)`` head yields a ``(k, n)`` array.
    """
    if ad.shape_of(value)[-1] != ad.shape_of(head.mean)[-1]:
        raise ValueError(
            f"value has dimension {ad.shape_of(value)[-1]}, head has {ad.shape_of(head.mean)[-1]}"
        )
    resid = (value - head.mean) / head.std
    per_coord = -HALF_LOG_2PI - ad.log(head.std) - 0.5 * resid * resid
    return ad.sum(per_coord, axis=-1)


def reparameterized_sample(head, noise):
    """Return ``mean + std * noise``; differentiable in the head's parameters."""
    if ad.shape_of(noise)[-1] != ad.shape_of(head.mean)[-1]:
        raise ValueError("noise dimension does not match head dimension")
    return head.mean + head.std * noise


def entropy(head):
    """Differential entropy of the head, summed over the last axis."""
    return ad.sum(HALF_LOG_2PI + 0.5 + ad.log(head.std), axis=-1)
