"""Multilayer perceptrons that emit diagonal Gaussian heads, plus a free Gaussian prior."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .gaussian import GaussianHead

STD_FLOOR = 1e-4


def softplus_inverse(v):
    return float(np.log(np.expm1(v)))


def _head_from_raw(mean, raw_std):
    return GaussianHead(mean=mean, std=ad.softplus(raw_std) + STD_FLOOR)


def layer_param_count(sizes):
    return int(sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:])))


@dataclass
class Mlp:
    """Fully connected network whose output splits into mean and raw-std halves.

    ``params`` is one flat float64 vector holding, for each layer in order, the
    ``(fan_in, fan_out)`` weight matrix in row-major order followed by the bias.
    With ``skip=True`` a trailing ``(in_dim, out_dim)`` matrix adds a linear
    path from the standardized input straight to the mean head.
    The fixed affine maps ``in_loc/in_scale`` and ``out_loc/out_scale`` are not
    trained; they standardize inputs and rescale the output head (identity by
    default).
    """

    sizes: tuple
    activation: str = "relu"
    params: np.ndarray = None
    skip: bool = False
    in_loc: np.ndarray = None
    in_scale: np.ndarray = None
    out_loc: np.ndarray = None
    out_scale: np.ndarray = None

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        if self.sizes[-1] % 2:
            raise ValueError("output width must be even (mean and std halves)")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")
        d_in, d_out = self.sizes[0], self.out_dim
        self.in_loc = np.zeros(d_in) if self.in_loc is None else np.asarray(self.in_loc, float)
        self.in_scale = np.ones(d_in) if self.in_scale is None else np.asarray(self.in_scale, float)
        self.out_loc = np.zeros(d_out) if self.out_loc is None else np.asarray(self.out_loc, float)
        self.out_scale = (
            np.ones(d_out) if self.out_scale is None else np.asarray(self.out_scale, float)
        )

    @property
    def n_params(self):
        extra = self.sizes[0] * (self.sizes[-1] // 2) if self.skip else 0
        return layer_param_count(self.sizes) + extra

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1] // 2

    @classmethod
    def initialized(cls, sizes, rng, activation="relu", skip=False, **kwargs):
        """He-uniform weights (Glorot for non-ReLU activations), zero biases.

        With ``skip`` the last layer and the skip matrix start at zero, so the
        initial model is the constant head and depth is only used as needed.
        """
        sizes = tuple(int(s) for s in sizes)
        chunks = []
        n_layers = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if skip and i == n_layers - 1:
                chunks.append(np.zeros(fan_in * fan_out))
            elif activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
                chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        if skip:
            chunks.append(np.zeros(sizes[0] * (sizes[-1] // 2)))
        return cls(sizes, activation, np.concatenate(chunks), skip, **kwargs)

    def unpack(self, params=None):
        """Split a flat parameter vector (array or Tensor) into ``[(W, b), ...]``."""
        params = self.params if params is None else params
        layers, offset = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = ad.reshape(params[offset : offset + fan_in * fan_out], (fan_in, fan_out))
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers

    def forward(self, inp, params=None):
        """Map ``inp`` (``(..., in_dim)``) to a :class:`GaussianHead` over ``out_dim``."""
        if ad.shape_of(inp)[-1] != self.in_dim:
            raise ValueError(f"input width {ad.shape_of(inp)[-1]} != {self.in_dim}")
        act = ad.ACTIVATIONS[self.activation]
        h = (inp - self.in_loc) / self.in_scale
        params = self.params if params is None else params
        layers = self.unpack(params)
        out = h
        for i, (w, b) in enumerate(layers):
            out = out @ w + b
            if i < len(layers) - 1:
                out = act(out)
        d = self.out_dim
        mean = out[..., :d]
        if self.skip:
            start = layer_param_count(self.sizes)
            s = ad.reshape(params[start:], (self.in_dim, d))
            mean = mean + h @ s
        head = _head_from_raw(mean, out[..., d:])
        return GaussianHead(
            mean=head.mean * self.out_scale + self.out_loc, std=head.std * self.out_scale
        )

    __call__ = forward


@dataclass
class DiagonalGaussian:
    """Learnable input-free diagonal Gaussian; ``params = [mean (d), raw_std (d)]``."""

    dim: int
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dim = int(self.dim)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.params is None:
            self.params = np.concatenate(
                [np.zeros(self.dim), np.full(self.dim, softplus_inverse(1.0 - STD_FLOOR))]
            )
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (2 * self.dim,):
            raise ValueError(f"expected {2 * self.dim} parameters, got {self.params.shape}")

    @property
    def n_params(self):
        return 2 * self.dim

    @property
    def sizes(self):
        return (self.dim,)

    def forward(self, params=None):
        params = self.params if params is None else params
        return _head_from_raw(params[: self.dim], params[self.dim :])

    __call__ = forward
