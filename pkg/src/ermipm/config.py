"""Centralized tolerances, size constants, and named RNG streams.

Every magic number that more than one module relies on lives here, so tests
and library code can never drift apart. Randomized components never share a
generator: each derives an independent stream from (root seed, dotted name),
which keeps e.g. the sparsifier's checker randomness statistically isolated
from its candidate locator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Tolerances", "TOL", "rng_stream", "ln"]


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across modules (all overridable)."""

    #: relative symmetry slack accepted on SPD inputs
    sym_rel: float = 1e-12
    #: relative residual guaranteed by factorization solves
    solve_rel: float = 1e-9
    #: residual bound for inverse square roots, ``norm(W G W - I)``
    inv_sqrt_residual: float = 1e-8
    #: leverage scores must sum to d within this (relative, ridgeless case)
    leverage_sum_rel: float = 1e-8
    #: slack on Loewner eigenvalue interval endpoints
    loewner_slack: float = 1e-12
    #: eigenvalues above ``-psd_clamp`` (times scale) count as nonnegative
    psd_clamp: float = 1e-9
    #: maintained sketch products must match recomputation to this
    maintained_product: float = 1e-9
    #: dual feasibility drift allowed, ``norm(s - (c - A y), inf)`` per scale
    dual_feasibility: float = 1e-9


TOL = Tolerances()


def ln(x) -> float:
    """Natural log as a float; the convention for every size/cap formula."""
    return float(np.log(x))


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named component.

    Parameters
    ----------
    seed : int
        Root seed (any Python int; folded to 128 bits).
    name : str
        Dotted component path, e.g. ``"sparsifier.checker"``. Distinct names
        give statistically independent streams for the same seed.

    Returns
    -------
    numpy.random.Generator
        PCG64 generator; reproducible across platforms and runs.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    entropy = int(seed) & ((1 << 128) - 1)
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=key))
