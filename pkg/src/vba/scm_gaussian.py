"""Linear-Gaussian structural causal model with closed-form densities.

Each of the ``d`` coordinates is an independent three-variable SCM::

    z ~ N(0, 1)
    x = c1 * z + sigma1 * e1
    y = c2 * x + c3 * z + sigma2 * e2        e1, e2 ~ N(0, 1)

so every log-density below is a sum of per-coordinate univariate terms.
"""

import enum
import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import _rng
from .nn.gaussian import HALF_LOG_2PI, GaussianHead

OOD_HALF_WIDTH = 7.0

# uniform ranges for each structural constant; sigmas use (0, high]
CONSTANT_RANGES = {
    "c1": (0.0, 5.0),
    "c2": (0.0, 3.0),
    "c3": (-10.0, -5.0),
    "sigma1": (0.0, 1.0),
    "sigma2": (0.0, 3.0),
}
_CONSTANT_TAGS = {
    "c1": _rng.TAG_C1,
    "c2": _rng.TAG_C2,
    "c3": _rng.TAG_C3,
    "sigma1": _rng.TAG_SIGMA1,
    "sigma2": _rng.TAG_SIGMA2,
}


@dataclass(frozen=True)
class ScmConfig:
    """Per-dimension constants of the linear-Gaussian SCM (arrays of length ``dim``)."""

    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    seed: int = 0

    def __post_init__(self):
        arrays = {}
        for name in ("c1", "c2", "c3", "sigma1", "sigma2"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)).copy()
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        dims = {a.shape for a in arrays.values()}
        if len(dims) != 1 or arrays["c1"].ndim != 1 or arrays["c1"].size == 0:
            raise ValueError("all constants must be 1-D arrays of one common length >= 1")
        if np.any(arrays["sigma1"] <= 0) or np.any(arrays["sigma2"] <= 0):
            raise ValueError("sigma1 and sigma2 must be strictly positive")
        object.__setattr__(self, "seed", _rng.check_seed(self.seed))

    @property
    def dim(self):
        return self.c1.size

    def records(self):
        """Per-dimension ``dict`` view, one entry per coordinate."""
        return [
            {k: float(getattr(self, k)[i]) for k in ("c1", "c2", "c3", "sigma1", "sigma2")}
            for i in range(self.dim)
        ]

    def fingerprint(self):
        """SHA-256 over the little-endian encoding of dim, seed and all constants."""
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", self.dim, self.seed))
        for name in ("c1", "c2", "c3", "sigma1", "sigma2"):
            h.update(np.asarray(getattr(self, name), dtype="<f8").tobytes())
        return h.digest()

    def to_dict(self):
        return {
            "dim": self.dim,
            "seed": self.seed,
            "records": self.records(),
            "fingerprint": self.fingerprint().hex(),
        }

    @classmethod
    def from_dict(cls, doc):
        recs = doc["records"]
        if len(recs) != doc.get("dim", len(recs)):
            raise ValueError("config 'dim' does not match number of records")
        cfg = cls(**{k: [r[k] for r in recs] for k in CONSTANT_RANGES}, seed=doc.get("seed", 0))
        if "fingerprint" in doc and doc["fingerprint"] != cfg.fingerprint().hex():
            raise ValueError("config fingerprint does not match its contents")
        return cfg

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def subset(self, dims):
        """Config restricted to the given coordinate indices."""
        idx = np.asarray(dims)
        return ScmConfig(
            **{k: getattr(self, k)[idx] for k in CONSTANT_RANGES}, seed=self.seed
        )


class Origin(enum.IntEnum):
    OBSERVATIONAL = 0
    OUT_OF_DISTRIBUTION = 1
    INTERVENTIONAL = 2


@dataclass
class Dataset:
    """``n`` triplets ``(x, y, z)`` stored as ``(n, d)`` float64 matrices.

    For ``Origin.INTERVENTIONAL`` the rows of ``x`` are the values set by the
    intervention.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    origin: Origin
    config_fingerprint: bytes

    def __post_init__(self):
        self.x, self.y, self.z = (np.asarray(a, dtype=np.float64) for a in (self.x, self.y, self.z))
        if not (self.x.shape == self.y.shape == self.z.shape) or self.x.ndim != 2:
            raise ValueError(
                f"x, y, z must share one (n, d) shape; got {self.x.shape}, {self.y.shape}, {self.z.shape}"
            )
        self.origin = Origin(self.origin)
        if len(self.config_fingerprint) != 32:
            raise ValueError("config_fingerprint must be 32 bytes")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def rows(self, idx):
        return Dataset(self.x[idx], self.y[idx], self.z[idx], self.origin, self.config_fingerprint)


def _check_positive(name, value):
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def sample_config(dim, seed):
    """Draw fresh SCM constants, each from its own seeded substream."""
    dim = _check_positive("dim", dim)
    values = {}
    for name, (low, high) in CONSTANT_RANGES.items():
        draws = np.empty(dim)
        for k in range(dim):
            u = _rng.substream(seed, k, _CONSTANT_TAGS[name]).random()
            # sigmas: (0, high]; other constants: [low, high)
            draws[k] = high - (high - low) * u if name.startswith("sigma") else low + (high - low) * u
        values[name] = draws
    return ScmConfig(**values, seed=seed)


def _structural(config, z, seed, origin):
    n = z.shape[0]
    x = np.empty_like(z)
    y = np.empty_like(z)
    for k in range(config.dim):
        e1 = _rng.substream(seed, origin, k, _rng.TAG_EPS_X).standard_normal(n)
        e2 = _rng.substream(seed, origin, k, _rng.TAG_EPS_Y).standard_normal(n)
        x[:, k] = config.c1[k] * z[:, k] + config.sigma1[k] * e1
        y[:, k] = config.c2[k] * x[:, k] + config.c3[k] * z[:, k] + config.sigma2[k] * e2
    return x, y


def generate(config, n, seed):
    """Observational sample: ``z ~ N(0, 1)`` pushed through the structural equations."""
    n = _check_positive("n", n)
    z = np.empty((n, config.dim))
    for k in range(config.dim):
        z[:, k] = _rng.substream(seed, Origin.OBSERVATIONAL, k, _rng.TAG_Z).standard_normal(n)
    x, y = _structural(config, z, seed, Origin.OBSERVATIONAL)
    return Dataset(x, y, z, Origin.OBSERVATIONAL, config.fingerprint())


def generate_ood(config, n, seed):
    """Out-of-distribution sample: ``z ~ U(-7, 7)``, same mechanisms for x and y."""
    n = _check_positive("n", n)
    z = np.empty((n, config.dim))
    for k in range(config.dim):
        rng = _rng.substream(seed, Origin.OUT_OF_DISTRIBUTION, k, _rng.TAG_Z)
        z[:, k] = rng.uniform(-OOD_HALF_WIDTH, OOD_HALF_WIDTH, size=n)
    x, y = _structural(config, z, seed, Origin.OUT_OF_DISTRIBUTION)
    return Dataset(x, y, z, Origin.OUT_OF_DISTRIBUTION, config.fingerprint())


def generate_interventional(config, x, seed):
    """Sample ``y`` under ``do(x)``: x is set externally, z keeps its N(0, 1) law."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != config.dim:
        raise ValueError(f"x has {x.shape[1]} columns, config has dim {config.dim}")
    n = x.shape[0]
    z = np.empty_like(x)
    y = np.empty_like(x)
    for k in range(config.dim):
        z[:, k] = _rng.substream(seed, Origin.INTERVENTIONAL, k, _rng.TAG_Z).standard_normal(n)
        e2 = _rng.substream(seed, Origin.INTERVENTIONAL, k, _rng.TAG_EPS_Y).standard_normal(n)
        y[:, k] = config.c2[k] * x[:, k] + config.c3[k] * z[:, k] + config.sigma2[k] * e2
    return Dataset(x.copy(), y, z, Origin.INTERVENTIONAL, config.fingerprint())


def _as_rows(config, *arrays):
    out = [np.asarray(a, dtype=np.float64) for a in arrays]
    for a in out:
        if a.shape[-1] != config.dim:
            raise ValueError(f"expected last dimension {config.dim}, got shape {a.shape}")
    return out


def _normal_logpdf(v, mean, std):
    return -HALF_LOG_2PI - np.log(std) - 0.5 * ((v - mean) / std) ** 2


def interventional_params(config):
    """Per-dimension ``(slope, std)`` of y | do(x) ~ N(slope * x, std)."""
    return config.c2, np.sqrt(config.c3**2 + config.sigma2**2)


def observational_params(config):
    """Per-dimension ``(slope, std)`` of y | x ~ N(slope * x, std)."""
    denom = config.c1**2 + config.sigma1**2
    slope = config.c1 * config.c3 / denom + config.c2
    std = np.sqrt(config.c3**2 * config.sigma1**2 / denom + config.sigma2**2)
    return slope, std


def log_interventional(config, x, y):
    """Ground-truth ``log p(y | do(x))``; rows of ``(n, d)`` input give an ``(n,)`` array."""
    x, y = _as_rows(config, x, y)
    slope, std = interventional_params(config)
    return _normal_logpdf(y, slope * x, std).sum(axis=-1)


def log_observational(config, x, y):
    """Ground-truth ``log p(y | x)`` under the observational distribution."""
    x, y = _as_rows(config, x, y)
    slope, std = observational_params(config)
    return _normal_logpdf(y, slope * x, std).sum(axis=-1)


def posterior_z_given_x(config, x):
    """Moments of z | x: mean ``c1 x / (c1^2 + s1^2)``, std ``sqrt(s1^2 / (c1^2 + s1^2))``."""
    (x,) = _as_rows(config, x)
    denom = config.c1**2 + config.sigma1**2
    return GaussianHead(
        mean=config.c1 * x / denom, std=np.broadcast_to(np.sqrt(config.sigma1**2 / denom), x.shape)
    )


def posterior_z_given_xy(config, x, y):
    """Observational conditional z | x, y, the target an MLE-trained encoder learns."""
    x, y = _as_rows(config, x, y)
    precision = 1.0 + config.c1**2 / config.sigma1**2 + config.c3**2 / config.sigma2**2
    mean = (config.c1 * x / config.sigma1**2 + config.c3 * (y - config.c2 * x) / config.sigma2**2) / precision
    return GaussianHead(mean=mean, std=np.broadcast_to(1.0 / np.sqrt(precision), mean.shape))


def optimal_encoder_params(config, x, y):
    """Normalized ``N(z; 0, 1) * N(y; c2 x + c3 z, sigma2)`` as a Gaussian in z.

    This is the maximizer of the lower bound on ``log p(y | do(x))``; plugging
    it in makes the bound exact.
    """
    x, y = _as_rows(config, x, y)
    precision = 1.0 + config.c3**2 / config.sigma2**2
    mean = config.c3 * (y - config.c2 * x) / config.sigma2**2 / precision
    return GaussianHead(mean=mean, std=np.broadcast_to(1.0 / np.sqrt(precision), mean.shape))


def expected_log_interventional(config, dataset):
    """Mean of :func:`log_interventional` over the rows of ``dataset``."""
    check_dataset(config, dataset)
    return float(np.mean(log_interventional(config, dataset.x, dataset.y)))


def expected_log_observational(config, dataset):
    check_dataset(config, dataset)
    return float(np.mean(log_observational(config, dataset.x, dataset.y)))


def check_dataset(config, dataset):
    if dataset.dim != config.dim:
        raise ValueError(f"dataset dimension {dataset.dim} != config dimension {config.dim}")


def log_prior_z(z):
    return _normal_logpdf(np.asarray(z, dtype=np.float64), 0.0, 1.0).sum(axis=-1)


def log_decoder_true(config, x, z, y):
    """True ``log p(y | x, z)``."""
    x, z, y = _as_rows(config, x, z, y)
    return _normal_logpdf(y, config.c2 * x + config.c3 * z, config.sigma2).sum(axis=-1)


# ---------------------------------------------------------------------------
# serialization

DATASET_MAGIC = b"VBAD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sBQQB32s")


def dataset_to_bytes(dataset):
    header = _HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        dataset.n,
        dataset.dim,
        int(dataset.origin),
        dataset.config_fingerprint,
    )
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (dataset.x, dataset.y, dataset.z))
    return header + body


def dataset_from_bytes(data):
    if len(data) < _HEADER.size:
        raise ValueError("truncated dataset file")
    magic, version, n, d, origin, fp = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    expected = _HEADER.size + 3 * n * d * 8
    if len(data) != expected:
        raise ValueError(f"dataset file has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    x, y, z = (flat[i * n * d : (i + 1) * n * d].reshape(n, d) for i in range(3))
    return Dataset(x, y, z, Origin(origin), fp)


def save_dataset(path, dataset):
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(dataset))


def load_dataset(path):
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def dataset_to_csv(dataset):
    """Text export: header ``x_0..x_{d-1},y_0..,z_0..`` then one row per sample."""
    d = dataset.dim
    cols = [f"{v}_{i}" for v in "xyz" for i in range(d)]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    block = np.hstack([dataset.x, dataset.y, dataset.z])
    for row in block:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def dataset_from_csv(text, origin=Origin.OBSERVATIONAL, config_fingerprint=bytes(32)):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    d = len(header) // 3
    if len(header) != 3 * d or header[:1] != ["x_0"]:
        raise ValueError("unexpected CSV header")
    block = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    block = block.reshape(-1, 3 * d)
    return Dataset(block[:, :d], block[:, d : 2 * d], block[:, 2 * d :], origin, config_fingerprint)
