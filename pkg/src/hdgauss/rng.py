"""Reproducible random streams, the Box-Muller transform and diagonal sampling."""
from __future__ import annotations

import numpy as np

from .core import DimensionError, NotPositiveDefiniteError

_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    Built on Philox seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``
    so that sibling streams for parallel chains need no coordination.
    Standard normals are produced by the Box-Muller transform.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, stream_id: int) -> "RngStream":
        """Sibling stream sharing the seed."""
        return RngStream(self.seed, stream_id)

    def uniform(self, size=None) -> np.ndarray:
        """Uniform variates on the half-open interval (0, 1]."""
        return 1.0 - self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        """Standard normal variates via Box-Muller pairs.

        Pairs are consumed in order: the sine output first, then the cosine.
        """
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u = 1.0 - self._gen.random(2 * m)
        r = np.sqrt(-2.0 * np.log(u[:m]))
        ang = 2.0 * np.pi * u[m:]
        out = np.empty(2 * m)
        out[0::2] = r * np.sin(ang)
        out[1::2] = r * np.cos(ang)
        out = out[:n]
        return float(out[0]) if shape == () else out.reshape(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, p=None):
        return self._gen.choice(a, size=size, p=p)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def box_muller_transform(u1, u2, mu=0.0, q=1.0):
    """Map two uniforms on (0, 1] to two independent ``N(mu, 1/q)`` variates.

    ``(mu + r sin(2 pi u2) / sqrt(q), mu + r cos(2 pi u2) / sqrt(q))`` with
    ``r = sqrt(-2 log u1)``.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("precision q must be positive")
    r = np.sqrt(-2.0 * np.log(u1)) / np.sqrt(q)
    ang = 2.0 * np.pi * np.asarray(u2, dtype=float)
    return mu + r * np.sin(ang), mu + r * np.cos(ang)


def box_muller(stream: RngStream, mu: float = 0.0, q: float = 1.0) -> tuple[float, float]:
    """Draw one pair of independent ``N(mu, 1/q)`` variates."""
    if q <= 0:
        raise ValueError("precision q must be positive")
    u1, u2 = stream.uniform(2)
    a, b = box_muller_transform(u1, u2, mu, q)
    return float(a), float(b)


def sample_diagonal(stream, mu, q, size=None) -> np.ndarray:
    """Draw ``theta_i ~ N(mu_i, 1/q_i)`` independently.

    Parameters
    ----------
    stream : RngStream
    mu, q : array_like, shape (d,)
    size : int, optional
        Number of draws; the result then has shape ``(size, d)``.
    """
    mu = np.asarray(mu, dtype=float)
    q = np.asarray(q, dtype=float)
    if mu.shape != q.shape:
        raise DimensionError(f"mu {mu.shape} and q {q.shape} differ")
    if not np.all(q > 0):
        raise NotPositiveDefiniteError("diagonal precision entries must be positive")
    d = q.shape[0]
    if size is None:
        return mu + stream.normal(d) / np.sqrt(q)
    return mu + stream.normal((size, d)) / np.sqrt(q)


def standard_normal_columns(stream, d: int, k: int | None) -> np.ndarray:
    """``(d,)`` normals when ``k is None`` else ``(d, k)`` (column-major draw order).

    The batch is one draw of ``k d`` variates; column ``j`` holds entries
    ``j d .. (j + 1) d - 1``.
    """
    if k is None:
        return stream.normal(d)
    return stream.normal((k, d)).T.copy()


class StreamBundle:
    """One :class:`RngStream` per chain, used when chains are run as columns.

    ``normal((k, ...))`` draws row ``j`` from stream ``j``, so column ``j`` of
    a batched chain is bit-identical to the same chain run on its own.
    """

    def __init__(self, streams):
        self.streams = list(streams)

    @classmethod
    def for_chains(cls, seed: int, n_chains: int, first_id: int = 0):
        return cls(RngStream(seed, first_id + j) for j in range(n_chains))

    def __len__(self):
        return len(self.streams)

    def normal(self, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        if size[0] != len(self.streams):
            raise DimensionError(f"bundle of {len(self.streams)} streams cannot fill leading axis {size[0]}")
        return np.stack([s.normal(size[1:]) for s in self.streams])

    def uniform(self, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        return np.stack([s.uniform(size[1:]) for s in self.streams])


class FixedStream:
    """Stream returning prescribed standard normals in order.

    With ``values=None`` it returns zeros. ``count`` records how many normals
    were consumed, which lets deterministic probes reconstruct the linear map
    from noise to output.
    """

    def __init__(self, values=None):
        self.values = None if values is None else np.asarray(values, dtype=float).ravel()
        self.count = 0

    def normal(self, size=None):
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        if self.values is None:
            out = np.zeros(n)
        else:
            if self.count + n > self.values.shape[0]:
                raise IndexError("fixed stream exhausted")
            out = self.values[self.count:self.count + n].copy()
        self.count += n
        return float(out[0]) if shape == () else out.reshape(shape)
