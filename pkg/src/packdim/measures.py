"""Atomic measures on the unit cube and generators for fractal test measures.

A measure is a weighted point cloud: atoms in [0,1]^n with positive weights
summing to one.  Generators produce measures with analytically known
dimensions (self-similar IFS attractors, uniform grids, products, and a
Moran construction with distinct lower/upper local exponents).
"""

from __future__ import annotations

import json
import math
import os
import re

import numpy as np
from scipy.optimize import brentq

from .errors import CapacityError, FormatError, ParameterError

DEFAULT_ATOM_CAP = 2**20
WEIGHT_TOL = 1e-9
MERGE_DECIMALS = 12

_LOG3_2 = math.log(2.0) / math.log(3.0)


class PointMeasure:
    """Weighted atomic approximation of a compactly supported probability measure.

    Parameters
    ----------
    atoms : array of shape (N, n)
        Coordinates in [0,1]^n.  A 1-D array is treated as N points in R^1.
    weights : array of shape (N,)
        Strictly positive, summing to 1 within ``WEIGHT_TOL``.
    metadata : dict, optional
        Free-form provenance (target dimensions, generator parameters).

    Instances are immutable; the underlying arrays are marked read-only.
    """

    def __init__(self, atoms, weights, metadata=None):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ParameterError("atoms must be a nonempty (N, n) array")
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape[0] != atoms.shape[0]:
            raise ParameterError(
                f"got {atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        if np.any(~np.isfinite(atoms)) or np.any(atoms < 0.0) or np.any(atoms > 1.0):
            raise ParameterError("atom coordinates must lie in [0, 1]")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0.0):
            raise ParameterError("weights must be finite and strictly positive")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ParameterError(f"weights sum to {total!r}, expected 1 within {WEIGHT_TOL}")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        self.atoms = atoms
        self.weights = weights
        self.metadata = dict(metadata) if metadata else {}

    @property
    def ambient_dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    def __repr__(self) -> str:
        return (
            f"PointMeasure(n={self.ambient_dim}, atoms={self.num_atoms}, "
            f"metadata={sorted(self.metadata)})"
        )


class IfsSystem:
    """Iterated function system of similarity maps x -> r*x + a on [0,1]^n.

    Each map must send the unit cube into itself (a >= 0 and r + a <= 1
    per coordinate).  Probabilities default to uniform.
    """

    def __init__(self, maps, probabilities=None, ambient_dim=None):
        if not maps:
            raise ParameterError("IfsSystem needs at least one map")
        parsed = []
        for ratio, translation in maps:
            ratio = float(ratio)
            translation = np.atleast_1d(np.asarray(translation, dtype=float))
            if not 0.0 < ratio < 1.0:
                raise ParameterError(f"contraction ratio {ratio!r} not in (0, 1)")
            parsed.append((ratio, translation))
        n = parsed[0][1].shape[0] if ambient_dim is None else int(ambient_dim)
        for ratio, translation in parsed:
            if translation.shape != (n,):
                raise ParameterError("all translations must share one ambient dimension")
            if np.any(translation < 0.0) or np.any(ratio + translation > 1.0 + 1e-12):
                raise ParameterError("map does not send [0,1]^n into itself")
        if probabilities is None:
            probabilities = np.full(len(parsed), 1.0 / len(parsed))
        probabilities = np.asarray(probabilities, dtype=float).ravel()
        if probabilities.shape[0] != len(parsed):
            raise ParameterError("one probability per map required")
        if np.any(probabilities <= 0.0) or abs(probabilities.sum() - 1.0) > WEIGHT_TOL:
            raise ParameterError("probabilities must be positive and sum to 1")
        self.ambient_dim = n
        self.ratios = np.array([r for r, _ in parsed])
        self.translations = np.vstack([t for _, t in parsed])
        self.probabilities = probabilities

    @property
    def num_maps(self) -> int:
        return self.ratios.shape[0]

    def similarity_dimension(self) -> float:
        """Solution s of sum_i ratio_i**s = 1 (log k / log(1/r) when equal)."""
        k = self.num_maps
        if k == 1:
            return 0.0
        if np.allclose(self.ratios, self.ratios[0], rtol=0, atol=0):
            return math.log(k) / math.log(1.0 / self.ratios[0])
        f = lambda s: np.sum(self.ratios**s) - 1.0
        hi = math.log(k) / math.log(1.0 / self.ratios.max()) + 1.0
        return float(brentq(f, 0.0, hi, xtol=1e-14))


def _check_cap(count: int, atom_cap: int) -> None:
    if count > atom_cap:
        raise CapacityError(f"construction needs {count} atoms, cap is {atom_cap}")


def make_ifs_measure(system: IfsSystem, depth: int, atom_cap: int = DEFAULT_ATOM_CAP) -> PointMeasure:
    """Atoms at the images of 0 under all length-``depth`` map compositions.

    Anchoring at the cylinder base point keeps coordinates exactly rational
    for dyadic/triadic systems.  Weights are products of branch probabilities.
    """
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    _check_cap(system.num_maps**depth, atom_cap)
    atoms = np.zeros((1, system.ambient_dim))
    weights = np.ones(1)
    for _ in range(depth):
        atoms = (system.ratios[:, None, None] * atoms[None, :, :]
                 + system.translations[:, None, :]).reshape(-1, system.ambient_dim)
        weights = (system.probabilities[:, None] * weights[None, :]).ravel()
    meta = {
        "similarity_dimension": system.similarity_dimension(),
        "ifs_depth": depth,
    }
    return PointMeasure(atoms, weights, metadata=meta)


def make_product_measure(a: PointMeasure, b: PointMeasure,
                         atom_cap: int = DEFAULT_ATOM_CAP) -> PointMeasure:
    """Product measure on [0,1]^(n_a + n_b): concatenated atoms, product weights."""
    _check_cap(a.num_atoms * b.num_atoms, atom_cap)
    left = np.repeat(a.atoms, b.num_atoms, axis=0)
    right = np.tile(b.atoms, (a.num_atoms, 1))
    weights = (a.weights[:, None] * b.weights[None, :]).ravel()
    weights = weights / weights.sum()
    meta = {}
    da = a.metadata.get("similarity_dimension")
    db = b.metadata.get("similarity_dimension")
    if da is not None and db is not None:
        meta["similarity_dimension"] = da + db
    meta["factor_metadata"] = [dict(a.metadata), dict(b.metadata)]
    return PointMeasure(np.hstack([left, right]), weights, metadata=meta)


_SPARSE_OFFSETS = {1: (0,), 2: (0, 2), 3: (0, 1, 2)}


def make_sparse_scale_measure(lower: float, upper: float, depth: int, seed: int = 0,
                              atom_cap: int = DEFAULT_ATOM_CAP) -> PointMeasure:
    """Moran construction whose running mass exponent oscillates between
    ``lower`` and ``upper``.

    Triadic levels branch into 1, 2 or 3 children (children chosen with gaps
    where possible so cylinder masses equal ball masses at triadic radii).
    Dense and lean blocks alternate with geometrically growing lengths, so the
    running average of per-level branching exponents sweeps down to ``lower``
    and back up to ``upper`` several times before ``depth``.
    """
    if not 0.0 <= lower <= upper <= 1.0:
        raise ParameterError(
            f"need 0 <= lower <= upper <= 1 for the triadic base, got ({lower}, {upper})"
        )
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    rng = np.random.default_rng(seed)
    increments = {b: math.log(b) / math.log(3.0) for b in (1, 2, 3)}
    branchings = []
    total = 0.0
    target = upper
    swap_tol = 0.015
    count = 1
    for level in range(1, depth + 1):
        best = min(
            increments,
            key=lambda b: (abs((total + increments[b]) / level - target),
                           rng.random()),
        )
        if count * best > atom_cap:
            best = 1
        branchings.append(best)
        count *= best
        total += increments[best]
        average = total / level
        if target == upper and average >= upper - swap_tol:
            target = lower
        elif target == lower and average <= lower + swap_tol:
            target = upper
    atoms = np.zeros((1, 1))
    weights = np.ones(1)
    for level, b in enumerate(branchings, start=1):
        offs = np.array(_SPARSE_OFFSETS[b], dtype=float) * 3.0**-level
        atoms = (atoms[None, :, :] + offs[:, None, None]).reshape(-1, 1)
        weights = np.repeat(weights[None, :], b, axis=0).ravel() / b
    meta = {
        "target_lower": lower,
        "target_upper": upper,
        "branchings": branchings,
        "sparse_depth": depth,
    }
    return PointMeasure(atoms, weights, metadata=meta)


def normalize(measure: PointMeasure) -> PointMeasure:
    """Merge atoms equal after rounding to 1e-12 and rescale weights to sum 1.

    Merged groups keep the original coordinates of their first member (in
    lexicographic key order), so exact generator anchors are preserved.
    Idempotent.
    """
    keys = np.round(measure.atoms, MERGE_DECIMALS)
    _, first_index, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    weights = np.bincount(inverse, weights=measure.weights)
    atoms = measure.atoms[first_index]
    return PointMeasure(atoms, weights / weights.sum(), metadata=measure.metadata)


def cantor_measure(ratio: float = 1.0 / 3.0, depth: int = 11,
                   atom_cap: int = DEFAULT_ATOM_CAP) -> PointMeasure:
    """Self-similar measure of the two-map Cantor system {r*x, r*x + (1-r)}."""
    if not 0.0 < ratio < 0.5:
        raise ParameterError(f"cantor ratio must be in (0, 0.5), got {ratio!r}")
    system = IfsSystem([(ratio, [0.0]), (ratio, [1.0 - ratio])])
    return make_ifs_measure(system, depth, atom_cap=atom_cap)


def uniform_grid_measure(ambient_dim: int, points_per_axis: int) -> PointMeasure:
    """Uniform weights on the centers of a regular lattice of cells in [0,1]^n."""
    if ambient_dim < 1 or points_per_axis < 1:
        raise ParameterError("ambient_dim and points_per_axis must be >= 1")
    side = (np.arange(points_per_axis) + 0.5) / points_per_axis
    grids = np.meshgrid(*([side] * ambient_dim), indexing="ij")
    atoms = np.stack([g.ravel() for g in grids], axis=1)
    n = atoms.shape[0]
    return PointMeasure(atoms, np.full(n, 1.0 / n),
                        metadata={"grid_points_per_axis": points_per_axis})


def dirac_measure(point) -> PointMeasure:
    """Unit mass at a single point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return PointMeasure(point[None, :], np.ones(1))


def save_measure(measure: PointMeasure, path) -> None:
    """Write the documented text format plus a JSON metadata sidecar.

    Format: header ``n=<int> N=<int>`` then one ``x_1 ... x_n w`` line per
    atom, shortest round-trip decimal representation.
    """
    path = os.fspath(path)
    lines = [f"n={measure.ambient_dim} N={measure.num_atoms}"]
    for row, w in zip(measure.atoms, measure.weights):
        lines.append(" ".join(repr(float(v)) for v in row) + f" {float(w)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if measure.metadata:
        with open(path + ".meta", "w", encoding="utf-8") as fh:
            json.dump(measure.metadata, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def load_measure(path) -> PointMeasure:
    """Inverse of :func:`save_measure`; validates all measure invariants."""
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        match = re.fullmatch(r"n=(\d+) N=(\d+)\s*", header)
        if not match:
            raise FormatError(f"bad measure header {header!r}")
        n, count = int(match.group(1)), int(match.group(2))
        rows = []
        for line in fh:
            if line.strip():
                rows.append([float(tok) for tok in line.split()])
    if len(rows) != count:
        raise FormatError(f"header promised {count} atoms, file has {len(rows)}")
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != n + 1:
        raise FormatError(f"expected {n + 1} columns per line")
    metadata = {}
    if os.path.exists(path + ".meta"):
        with open(path + ".meta", "r", encoding="utf-8") as fh:
            metadata = json.load(fh)
    return PointMeasure(data[:, :n], data[:, n], metadata=metadata)


def _parse_real(token: str) -> float:
    """Parse '0.25', '1/3' or '2^-2.5' style literals."""
    token = token.strip()
    if "^" in token or "**" in token:
        base, _, expo = token.replace("**", "^").partition("^")
        return float(base) ** float(expo)
    if "/" in token:
        num, _, den = token.partition("/")
        return float(num) / float(den)
    return float(token)


def from_spec(spec: str, atom_cap: int = DEFAULT_ATOM_CAP) -> PointMeasure:
    """Build a measure from a generator spec string.

    Grammar::

        cantor:<ratio>:<depth>
        uniform:<ambient_dim>:<points_per_axis>
        dirac:<x>[,<y>...]
        sparse:<lower>:<upper>:<depth>[:<seed>]
        file:<path>
    """
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "cantor":
            ratio, depth = _parse_real(args[0]), int(args[1])
            return cantor_measure(ratio, depth, atom_cap=atom_cap)
        if kind == "uniform":
            return uniform_grid_measure(int(args[0]), int(args[1]))
        if kind == "dirac":
            return dirac_measure([_parse_real(v) for v in args[0].split(",")])
        if kind == "sparse":
            seed = int(args[3]) if len(args) > 3 else 0
            return make_sparse_scale_measure(
                _parse_real(args[0]), _parse_real(args[1]), int(args[2]), seed=seed,
                atom_cap=atom_cap)
        if kind == "file":
            return load_measure(rest)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"malformed measure spec {spec!r}: {exc}") from exc
    raise ParameterError(f"unknown measure spec kind {kind!r}")
