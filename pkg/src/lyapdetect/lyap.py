"""Lyapunov spectrum estimation for scalar sequences.

The estimator follows the classical three-stage recipe: reconstruct an orbit
by delay embedding, fit one local tangent map per reference point from how
small neighborhoods propagate forward, and extract exponents from a QR
accumulation over the sequence of tangent maps.

Stage details
-------------
Embedding uses lag 1: orbit vector ``i`` is ``x[i : i+emb_dim]``. Tangent
maps act on reduced coordinates that subsample each window with stride
``m = (emb_dim-1) // (matrix_dim-1)``, so the map state at reference ``i``
is ``z_i = (x[i], x[i+m], ..., x[i+(d-1)m])`` with ``d = matrix_dim``.
The map is a companion matrix: the first ``d-1`` rows shift coordinates,
and the last row holds least-squares coefficients ``a`` chosen so that
``a . (z_j - z_i)`` tracks ``x[j+d*m] - x[i+d*m]`` over the neighbors ``j``
of ``i``. The fit discards singular directions the neighborhood barely
explores (see ``SV_RATIO_CUTOFF``), which keeps exponents honest on data
whose attractor has fewer dimensions than the map: without the truncation,
near-degenerate neighborhoods split a single expanding direction into a
ladder of spurious, faster copies. Neighborhoods use the Chebyshev
(max-coordinate) metric on the
full embedding window with a tie-inclusive smallest radius that admits at
least ``min_nb`` candidates.

QR accumulation left-multiplies each successive map onto an orthonormal
frame, re-orthonormalizes, and sums the logs of the R diagonal (sign-fixed
to be nonnegative, floored at 1e-12 before the log). Exponent ``k`` is the
k-th log-sum divided by ``K * m * tau`` where ``K`` is the number of maps
accumulated. Exponents are reported in accumulation order, not sorted.

Reference points step through the series with stride ``m``. A reference
whose neighborhood carries no information (every displacement exactly zero,
common in flat regions of flattened images) contributes no map and is
skipped; ``n_steps`` counts the maps actually accumulated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Relative singular value cutoff for the tangent-map least squares. A
#: neighborhood only explores a few directions of the reduced coordinate
#: space; displacement components below this fraction of the leading
#: singular value are curvature and rounding residue, and fitting against
#: them manufactures inflated expansion rates. Directions under the cutoff
#: are discarded (minimum-norm solution on the rest).
SV_RATIO_CUTOFF = 1e-2

#: Floor applied to R diagonal entries before taking logs, so an exactly
#: singular tangent map contributes a large negative (not infinite) term.
EPS_FLOOR = 1e-12


class LyapError(Exception):
    """Base class for estimator failures."""


class SeriesTooShortError(LyapError):
    pass


class NotEnoughNeighborsError(LyapError):
    pass


class DegenerateNeighborhoodError(LyapError):
    pass


class ZeroVarianceError(LyapError):
    pass


@dataclass(frozen=True)
class LyapunovParams:
    """Estimator parameters.

    Defaults suit 28x28 images flattened to 784 samples: embedding window 10,
    four exponents, and a neighbor quota of ``min(2*matrix_dim, matrix_dim+4)``
    (that expression is the default whenever ``min_nb`` is left unset).
    ``tau`` is the sampling period used to convert per-step growth to
    per-time-unit exponents. ``min_tsep`` excludes candidates within that
    many steps of the reference index; 0 excludes only the reference itself,
    the right choice for spatial pixel sequences where temporal
    autocorrelation is not a concern.
    """

    emb_dim: int = 10
    matrix_dim: int = 4
    min_nb: int | None = None
    min_tsep: int = 0
    tau: float = 1.0

    def __post_init__(self):
        if self.matrix_dim < 2:
            raise ValueError(f"matrix_dim must be >= 2, got {self.matrix_dim}")
        if self.emb_dim < self.matrix_dim:
            raise ValueError(
                f"emb_dim {self.emb_dim} must be >= matrix_dim {self.matrix_dim}"
            )
        if (self.emb_dim - 1) % (self.matrix_dim - 1) != 0:
            raise ValueError(
                f"emb_dim-1 ({self.emb_dim - 1}) must be divisible by "
                f"matrix_dim-1 ({self.matrix_dim - 1})"
            )
        if self.min_nb is None:
            object.__setattr__(
                self, "min_nb", min(2 * self.matrix_dim, self.matrix_dim + 4)
            )
        if self.min_nb < self.matrix_dim + 1:
            raise ValueError(
                f"min_nb {self.min_nb} must be >= matrix_dim+1 ({self.matrix_dim + 1})"
            )
        if self.min_tsep < 0:
            raise ValueError(f"min_tsep must be >= 0, got {self.min_tsep}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def m(self) -> int:
        """Stride between consecutive map coordinates and reference points."""
        return (self.emb_dim - 1) // (self.matrix_dim - 1)


@dataclass(frozen=True)
class LyapunovSpectrum:
    """Estimated exponents plus the accumulation length behind them."""

    exponents: np.ndarray
    n_steps: int

    def __post_init__(self):
        e = np.asarray(self.exponents, dtype=np.float64)
        if e.ndim != 1 or not np.all(np.isfinite(e)):
            raise ValueError("exponents must be a finite 1-D vector")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        object.__setattr__(self, "exponents", e)


@dataclass(frozen=True)
class OrbitIndexSet:
    """Neighbor indices for one reference orbit point.

    ``radius`` is the tie-inclusive Chebyshev radius actually used; every
    candidate at distance <= radius is in ``neighbors``.
    """

    reference: int
    neighbors: np.ndarray
    radius: float


def _series_values(series) -> np.ndarray:
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"series must be 1-D, got shape {values.shape}")
    return values


def delay_embed(series, dim: int, lag: int) -> np.ndarray:
    """Return the delay-embedded orbit, shape (n - (dim-1)*lag, dim).

    Row ``i`` is ``(x[i], x[i+lag], ..., x[i+(dim-1)*lag])``.
    """
    x = _series_values(series)
    if dim < 1 or lag < 1:
        raise ValueError(f"dim and lag must be >= 1, got dim={dim}, lag={lag}")
    count = len(x) - (dim - 1) * lag
    if count < 1:
        raise SeriesTooShortError(
            f"series of length {len(x)} too short for dim={dim}, lag={lag}"
        )
    idx = np.arange(count)[:, None] + np.arange(dim)[None, :] * lag
    return x[idx]


def find_neighbors(
    orbit: np.ndarray,
    i: int,
    min_nb: int,
    min_tsep: int = 0,
    valid=None,
) -> OrbitIndexSet:
    """Chebyshev neighbor search around orbit point ``i``.

    ``valid`` restricts the candidate pool: a boolean mask over orbit rows,
    a callable index predicate, or None for all rows. Rows with
    ``|j - i| <= min_tsep`` (including ``i`` itself) are never candidates.
    The radius is the smallest admitting at least ``min_nb`` candidates, and
    every candidate at that distance is included, so ties can push the
    neighbor count above ``min_nb``.
    """
    n = len(orbit)
    if valid is None:
        mask = np.ones(n, dtype=bool)
    elif callable(valid):
        mask = np.fromiter((bool(valid(j)) for j in range(n)), dtype=bool, count=n)
    else:
        mask = np.asarray(valid, dtype=bool).copy()
        if mask.shape != (n,):
            raise ValueError(f"valid mask shape {mask.shape} != ({n},)")
    lo = max(0, i - min_tsep)
    hi = min(n, i + min_tsep + 1)
    mask[lo:hi] = False

    candidates = np.nonzero(mask)[0]
    if len(candidates) < min_nb:
        raise NotEnoughNeighborsError(
            f"reference {i}: {len(candidates)} candidates, need {min_nb}"
        )
    dists = np.max(np.abs(orbit[candidates] - orbit[i]), axis=1)
    radius = np.partition(dists, min_nb - 1)[min_nb - 1]
    neighbors = candidates[dists <= radius]
    return OrbitIndexSet(reference=i, neighbors=neighbors, radius=float(radius))


def fit_tangent_map(series, i: int, neighbors: OrbitIndexSet, d: int, m: int) -> np.ndarray:
    """Fit the local tangent map at reference ``i`` from its neighborhood.

    Returns the d x d companion matrix whose last row solves, in the least
    squares sense over neighbors ``j``,

        a . (z_j - z_i) = x[j + d*m] - x[i + d*m],

    with ``z_k = (x[k], x[k+m], ..., x[k+(d-1)m])``. The least squares
    problem is solved through the truncated SVD of the displacement matrix:
    singular directions below ``SV_RATIO_CUTOFF`` times the leading singular
    value are discarded and the minimum-norm solution on the remaining
    subspace is returned. Without the truncation, low-dimensional data (a
    clean one-dimensional map, say) yields neighborhoods that are nearly
    rank one, and coefficients fitted along the unexplored directions track
    curvature instead of the dynamics, splitting each true exponent into a
    ladder of inflated copies. A neighborhood whose displacements are all
    exactly zero carries no directional information and raises
    DegenerateNeighborhoodError.
    """
    x = _series_values(series)
    nb = np.asarray(neighbors.neighbors, dtype=np.intp)
    if d < 2 or m < 1:
        raise ValueError(f"need d >= 2 and m >= 1, got d={d}, m={m}")
    if len(nb) < 1:
        raise DegenerateNeighborhoodError(f"reference {i}: empty neighborhood")
    top = max(int(nb.max()), i) + d * m
    if min(int(nb.min()), i) < 0 or top > len(x) - 1:
        raise SeriesTooShortError(
            f"reference {i}: index {top} beyond series end {len(x) - 1}"
        )

    ks = np.arange(d) * m
    disp = x[nb[:, None] + ks[None, :]] - x[i + ks]
    target = x[nb + d * m] - x[i + d * m]
    if not np.any(disp):
        raise DegenerateNeighborhoodError(
            f"reference {i}: all displacement vectors zero"
        )

    a = np.linalg.lstsq(disp, target, rcond=SV_RATIO_CUTOFF)[0]

    tmap = np.zeros((d, d))
    tmap[np.arange(d - 1), np.arange(1, d)] = 1.0
    tmap[d - 1] = a
    return tmap


def qr_accumulate(maps) -> tuple[np.ndarray, int]:
    """Accumulate log diagonal growth across a sequence of tangent maps.

    Starting from the identity frame, each map is applied and the result
    re-orthonormalized by QR with the R diagonal sign-fixed to be
    nonnegative. Returns (log-sums per direction, number of maps).
    """
    maps = list(maps)
    if not maps:
        raise ValueError("qr_accumulate needs at least one map")
    d = maps[0].shape[0]
    q = np.eye(d)
    sums = np.zeros(d)
    for tmap in maps:
        if tmap.shape != (d, d):
            raise ValueError(f"map shape {tmap.shape} != ({d}, {d})")
        q, r = np.linalg.qr(tmap @ q)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs
        sums += np.log(np.maximum(np.diag(r) * signs, EPS_FLOOR))
    return sums, len(maps)


def lyap_spectrum(series, params: LyapunovParams | None = None) -> LyapunovSpectrum:
    """Estimate ``matrix_dim`` Lyapunov exponents of a scalar sequence.

    Raises ZeroVarianceError for a constant sequence (no geometry to embed;
    a spectrum of minus infinity would be the only honest value, so the case
    is rejected instead), SeriesTooShortError when no reference point fits,
    and NotEnoughNeighborsError when the candidate pool is smaller than the
    neighbor quota.
    """
    if params is None:
        params = LyapunovParams()
    x = _series_values(series)
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if len(x) < 2 or np.var(x) == 0.0:
        raise ZeroVarianceError("series has zero variance")

    d = params.matrix_dim
    m = params.m
    orbit = delay_embed(x, params.emb_dim, 1)
    i_max = len(x) - 1 - d * m
    if i_max < 0:
        raise SeriesTooShortError(
            f"series of length {len(x)} too short for emb_dim={params.emb_dim}, "
            f"matrix_dim={d} (needs {d * m + 1} samples)"
        )

    # Candidates must leave room for the prediction target x[j + d*m].
    base_mask = np.zeros(len(orbit), dtype=bool)
    base_mask[: i_max + 1] = True

    maps = []
    for i in range(0, i_max + 1, m):
        nbhood = find_neighbors(orbit, i, params.min_nb, params.min_tsep, base_mask)
        try:
            maps.append(fit_tangent_map(x, i, nbhood, d, m))
        except DegenerateNeighborhoodError:
            continue
    if not maps:
        raise DegenerateNeighborhoodError("no reference point had a usable neighborhood")

    sums, count = qr_accumulate(maps)
    exponents = sums / (count * m * params.tau)
    return LyapunovSpectrum(exponents=exponents, n_steps=count)


def has_positive_exponent(spectrum: LyapunovSpectrum, tol: float = 0.0) -> bool:
    """True when any exponent exceeds ``tol`` (strict); the chaos flag."""
    return bool(np.any(spectrum.exponents > tol))
