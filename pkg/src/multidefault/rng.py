"""Counter-based random streams keyed by ``(seed, stream, path index)``.

Paths are grouped in fixed blocks; block ``b`` of stream ``s`` is drawn from a
Philox generator whose counter is set to ``(0, 0, s, b)``.  A draw is thus a
pure function of ``(seed, stream, path_index, position)``: any subset of paths
can be regenerated in any order, which makes parallel chunks mergeable.
"""

from __future__ import annotations

import numpy as np

BLOCK = 1024

STREAM_MARKS = 1
STREAM_FACTOR = 2
STREAM_SAMPLE = 3

_MASK64 = (1 << 64) - 1


def _block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    bitgen = np.random.Philox(key=int(seed) & _MASK64, counter=[0, 0, int(stream), int(block)])
    return np.random.Generator(bitgen)


def _draw(seed, path_index, stream, width, kind) -> np.ndarray:
    path_index = np.asarray(path_index, dtype=np.int64)
    out = np.empty((path_index.size, width))
    blocks = path_index // BLOCK
    for b in np.unique(blocks):
        sel = blocks == b
        gen = _block_generator(seed, stream, int(b))
        if kind == "exp":
            draws = gen.standard_exponential((BLOCK, width))
        else:
            draws = gen.random((BLOCK, width))
        out[sel] = draws[path_index[sel] % BLOCK]
    return out


def uniforms(seed: int, path_index, stream: int, width: int) -> np.ndarray:
    """Uniforms on [0, 1), shape ``(len(path_index), width)``."""
    return _draw(seed, path_index, stream, width, "uniform")


def exponential_marks(seed: int, path_index, n_levels: int) -> np.ndarray:
    """Unit-exponential marks ``E_1..E_N`` per path, strictly positive."""
    marks = _draw(seed, path_index, STREAM_MARKS, n_levels, "exp")
    return np.maximum(marks, np.finfo(float).tiny)
