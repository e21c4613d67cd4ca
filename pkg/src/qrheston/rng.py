"""Counter-based Gaussian increment generation.

All randomness in the package flows through one scheme: a Philox generator
keyed by the 64-bit run seed (outer and nested inner runs live in disjoint
key spaces via a tag bit).  Within a run, path p owns the raw positions
[p * stride, p * stride + n_draws) of the key's stream, where stride is
n_draws rounded up to a multiple of four -- Philox emits four 64-bit words
per counter block, so block-aligned strides let any contiguous chunk of
paths start with a plain counter jump.  The draw for (path, step) is
therefore a pure function of (seed, path, step): ensembles are bit-identical
however the paths are chunked across workers, and any single path can be
regenerated in isolation.

Raw words map to open-interval uniforms u = ((raw >> 11) + 0.5) * 2**-53,
and normals are their Gaussian quantiles, so the quality of the increments
is exactly that of the counter stream.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, DomainError

INNER_TAG = 1 << 63

# paths per work unit; fixed so memory use and scheduling are independent
# of the worker count (results are independent of it by construction)
CHUNK_PATHS = 8192

_U64_SCALE = 2.0 ** -53


def _validate_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)):
        raise DomainError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise DomainError(f"seed must fit in 64 bits, got {seed}")
    return seed


def _stride(n_draws: int) -> int:
    return -(-n_draws // 4) * 4


def normal_block(seed, first_path: int, n_paths: int, n_draws: int,
                 *, inner: bool = False) -> np.ndarray:
    """Standard-normal draws for paths [first_path, first_path + n_paths).

    Returns shape (n_paths, n_draws).  Row p depends only on
    (seed, inner, first_path + p), column k only on the step index, so the
    same matrix can be assembled from any subdivision of the path range.
    """
    seed = _validate_seed(seed)
    if n_paths < 0 or n_draws <= 0 or first_path < 0:
        raise DomainError("path range and draw count must be positive")
    if n_paths == 0:
        return np.empty((0, n_draws))
    key = (seed << 64) | (INNER_TAG if inner else 0)
    stride = _stride(n_draws)
    bg = np.random.Philox(key=key)
    if first_path:
        bg.advance(first_path * (stride // 4))
    raw = bg.random_raw(n_paths * stride).reshape(n_paths, stride)
    u = ((raw[:, :n_draws] >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_SCALE
    return ndtri(u)


def worker_count() -> int:
    """Worker cap from QRH_WORKERS, defaulting to the CPU count.

    Worker count never changes results, only wall time.
    """
    raw = os.environ.get("QRH_WORKERS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"QRH_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"QRH_WORKERS must be >= 1, got {n}")
    return n


def map_chunks(n_items: int, worker: "callable", chunk: int | None = None) -> None:
    """Run worker(start, stop) over fixed-size item ranges, maybe in parallel.

    The worker must write its results into preallocated arrays by index --
    chunk boundaries and scheduling order carry no information, so output
    is identical for any worker count.
    """
    if chunk is None:
        chunk = CHUNK_PATHS
    ranges = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    n_workers = min(worker_count(), len(ranges))
    if n_workers <= 1:
        for start, stop in ranges:
            worker(start, stop)
        return
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        # materialize to surface worker exceptions
        list(pool.map(lambda r: worker(*r), ranges))
