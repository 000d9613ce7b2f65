"""
# noqa: SS01
Counter-based Random Streams
============================

Every random draw of the package comes from a :py:class:`Streams` object. A stream is a Philox key derived from
a master seed and a path of spawn keys; individual generators are positioned by writing coordinates
(a block of sample paths, an integration step, an iteration...) in the upper words of the Philox counter.
The lowest word is left for the generator itself, so two coordinates never share draws.
Results therefore depend on the seed and on the coordinates only, never on the order or the thread in which
work items are processed.
"""

from __future__ import annotations

import zlib

import numpy as np

from difftime.base import Parametrizable

# Number of sample paths per block. Paths are always split this way, whatever the worker count.
BLOCK_SIZE = 1024


def _as_key(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    if key < 0:
        raise ValueError(f"Stream keys must be nonnegative, got {key}.")
    return int(key)


class Streams(Parametrizable):
    """
    Deterministic family of random number generators.

    Parameters
    ----------
    seed : int
        Master seed.
    path : tuple of int
        Spawn keys identifying this stream below the master seed. Use :py:meth:`spawn` rather than setting it.

    Examples
    --------
    >>> from difftime.streams import Streams
    >>> rng = Streams(42).spawn("training")
    >>> a = rng.generator(3).standard_normal(2)
    >>> b = rng.generator(3).standard_normal(2)
    >>> bool((a == b).all())
    True
    """

    def __init__(self, seed: int = 0, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError(f"Seeds must be nonnegative, got {seed}.")
        super().__init__(seed=int(seed), path=tuple(int(p) for p in path))

    def spawn(self, *keys: int | str) -> Streams:
        """Return an independent child stream. String keys are hashed, so ``spawn("x0")`` is stable across runs."""
        return Streams(self.seed, self.path + tuple(_as_key(k) for k in keys))

    @property
    def key(self) -> np.ndarray:
        """The 128-bit Philox key of this stream."""
        if "_key" not in self.__dict__:
            self._key = np.random.SeedSequence(self.seed, spawn_key=self.path).generate_state(2, dtype=np.uint64)
        return self._key

    def generator(self, *coords: int) -> np.random.Generator:
        """
        Return the generator positioned at the given coordinates.

        Parameters
        ----------
        *coords : int
            Up to three nonnegative integers, e.g. ``(block, step)``.

        Returns
        -------
        np.random.Generator
            A fresh generator; calling this twice with the same coordinates replays the same draws.
        """
        if len(coords) > 3:
            raise ValueError("At most three counter coordinates are available.")
        counter = np.zeros(4, dtype=np.uint64)
        counter[1 : 1 + len(coords)] = [_as_key(c) for c in coords]
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))

    def normal(self, shape: tuple[int, ...], *coords: int) -> np.ndarray:
        """Standard normal draws at the given coordinates."""
        return self.generator(*coords).standard_normal(shape)


def as_streams(rng: Streams | int | None) -> Streams:
    """Return `rng` as a :py:class:`Streams`. An integer is taken as the master seed, None means seed 0."""
    if isinstance(rng, Streams):
        return rng
    if rng is None:
        return Streams(0)
    if isinstance(rng, (int, np.integer)):
        return Streams(int(rng))
    raise TypeError(f"Expected a Streams object or an integer seed, got {type(rng).__name__}.")


def blocks(n: int, size: int = BLOCK_SIZE) -> list[slice]:
    """Split ``range(n)`` into consecutive slices of at most `size` items."""
    if n < 1:
        raise ValueError(f"Need at least one item, got {n}.")
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]
