"""Binary checkpoints for one model component.

Layout (all integers little-endian)::

    magic        4 bytes  b"VBAC"
    version      u8
    component    u8       0 prior, 1 decoder, 2 encoder
    activation   u8       index into ACTIVATION_CODES (0 for the prior)
    skip         u8       1 if the network has a linear input-to-mean path
    n_sizes      u32
    sizes        u32 * n_sizes
    params       f64 * n_params         (n_params follows from sizes)
    has_norm     u8
    [in_loc, in_scale   f64 * sizes[0] each
     out_loc, out_scale f64 * sizes[-1] / 2 each]
    has_opt      u8
    [step u64, lr f64, beta1 f64, beta2 f64, eps f64, m f64 * n_params, v f64 * n_params]
"""

import io
import struct

import numpy as np

from .mlp import DiagonalGaussian, Mlp
from .optim import OptimizerState

MAGIC = b"VBAC"
VERSION = 1
COMPONENTS = ("prior", "decoder", "encoder")
ACTIVATION_CODES = ("relu", "tanh", "softplus", "identity")


class CheckpointError(ValueError):
    pass


def _f64(arr):
    return np.asarray(arr, dtype="<f8").tobytes()


def dumps(component, module, opt_state=None):
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    buf = io.BytesIO()
    is_prior = isinstance(module, DiagonalGaussian)
    act = 0 if is_prior else ACTIVATION_CODES.index(module.activation)
    buf.write(MAGIC)
    skip = 0 if is_prior else int(module.skip)
    buf.write(struct.pack("<BBBB", VERSION, COMPONENTS.index(component), act, skip))
    buf.write(struct.pack("<I", len(module.sizes)))
    buf.write(struct.pack(f"<{len(module.sizes)}I", *module.sizes))
    buf.write(_f64(module.params))
    if is_prior:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        for arr in (module.in_loc, module.in_scale, module.out_loc, module.out_scale):
            buf.write(_f64(arr))
    if opt_state is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(struct.pack("<Q", opt_state.step))
        buf.write(struct.pack("<4d", opt_state.lr, opt_state.beta1, opt_state.beta2, opt_state.eps))
        buf.write(_f64(opt_state.m))
        buf.write(_f64(opt_state.v))
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def loads(data):
    """Parse checkpoint bytes into ``(component, module, opt_state_or_None)``."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, comp, act, skip = r.unpack("<BBBB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    component = COMPONENTS[comp]
    (n_sizes,) = r.unpack("<I")
    sizes = r.unpack(f"<{n_sizes}I")
    if component == "prior":
        module = DiagonalGaussian(sizes[0])
        module.params = r.floats(module.n_params)
        (has_norm,) = r.unpack("<B")
    else:
        module = Mlp(sizes, ACTIVATION_CODES[act], skip=bool(skip))
        module.params = r.floats(module.n_params)
        (has_norm,) = r.unpack("<B")
        if has_norm:
            module.in_loc = r.floats(module.in_dim)
            module.in_scale = r.floats(module.in_dim)
            module.out_loc = r.floats(module.out_dim)
            module.out_scale = r.floats(module.out_dim)
    (has_opt,) = r.unpack("<B")
    opt_state = None
    if has_opt:
        (step,) = r.unpack("<Q")
        lr, b1, b2, eps = r.unpack("<4d")
        m = r.floats(module.n_params)
        v = r.floats(module.n_params)
        opt_state = OptimizerState(m, v, step, lr, b1, b2, eps)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return component, module, opt_state


def save(path, component, module, opt_state=None):
    with open(path, "wb") as fh:
        fh.write(dumps(component, module, opt_state))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
