"""Benign image corruptions and norm-matched random perturbations.

All models clip the perturbed result to [0, 1] (clipping, not rescaling) and
are deterministic given a seed. Variance parameters are variances, not
standard deviations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import Image, Noisy

POISSON_SCALE = 255.0


class NoiseError(Exception):
    pass


class BadParamError(NoiseError):
    pass


class DimMismatchError(NoiseError):
    pass


class EmptyDistancesError(NoiseError):
    pass


@dataclass(frozen=True)
class Gaussian:
    """Additive white noise: x + N(mean, var)."""

    mean: float = 0.0
    var: float = 0.01
    name = "gaussian"


@dataclass(frozen=True)
class Pepper:
    """Each pixel independently forced to 0 with probability ``amount``."""

    amount: float = 0.05
    name = "pepper"


@dataclass(frozen=True)
class Salt:
    """Each pixel independently forced to 1 with probability ``amount``."""

    amount: float = 0.05
    name = "salt"


@dataclass(frozen=True)
class SaltAndPepper:
    """Pixels hit with probability ``amount`` go to 1 with probability
    ``salt_fraction``, else to 0."""

    amount: float = 0.05
    salt_fraction: float = 0.5
    name = "salt_and_pepper"


@dataclass(frozen=True)
class Poisson:
    """Shot noise: sample Poisson(x * L) / L with L = 255."""

    name = "poisson"


@dataclass(frozen=True)
class Speckle:
    """Multiplicative noise: x + x * N(0, var)."""

    var: float = 0.01
    name = "speckle"


@dataclass(frozen=True)
class LocalVarGaussian:
    """Additive Gaussian noise with a per-pixel variance map.

    With ``var_map`` None the map defaults to variance proportional to pixel
    intensity, scaled so the brightest pixel gets 0.05 (a flat-zero image
    gets a zero map, i.e. no noise).
    """

    var_map: np.ndarray | None = None
    name = "local_var_gaussian"


NoiseModel = Gaussian | Pepper | Salt | SaltAndPepper | Poisson | Speckle | LocalVarGaussian

DEFAULT_LOCAL_VAR_PEAK = 0.05


def _check_unit(value: float, what: str) -> None:
    if not (0.0 <= value <= 1.0):
        raise BadParamError(f"{what} must be in [0, 1], got {value}")


def _check_var(value: float, what: str) -> None:
    if not (value >= 0.0 and np.isfinite(value)):
        raise BadParamError(f"{what} must be a finite nonnegative variance, got {value}")


def apply_noise(image: Image, model: NoiseModel, seed: int) -> Image:
    """Apply one noise model; returns a new image tagged Noisy(model name)."""
    x = image.pixels
    rng = np.random.default_rng(seed)

    if isinstance(model, Gaussian):
        _check_var(model.var, "gaussian var")
        if not np.isfinite(model.mean):
            raise BadParamError(f"gaussian mean must be finite, got {model.mean}")
        out = x + rng.normal(model.mean, np.sqrt(model.var), size=x.shape)
    elif isinstance(model, Pepper):
        _check_unit(model.amount, "pepper amount")
        out = np.where(rng.random(x.shape) < model.amount, 0.0, x)
    elif isinstance(model, Salt):
        _check_unit(model.amount, "salt amount")
        out = np.where(rng.random(x.shape) < model.amount, 1.0, x)
    elif isinstance(model, SaltAndPepper):
        _check_unit(model.amount, "salt_and_pepper amount")
        _check_unit(model.salt_fraction, "salt_fraction")
        hit = rng.random(x.shape) < model.amount
        to_salt = rng.random(x.shape) < model.salt_fraction
        out = np.where(hit, np.where(to_salt, 1.0, 0.0), x)
    elif isinstance(model, Poisson):
        out = rng.poisson(x * POISSON_SCALE).astype(np.float64) / POISSON_SCALE
    elif isinstance(model, Speckle):
        _check_var(model.var, "speckle var")
        out = x + x * rng.normal(0.0, np.sqrt(model.var), size=x.shape)
    elif isinstance(model, LocalVarGaussian):
        if model.var_map is None:
            peak = x.max()
            var_map = x * (DEFAULT_LOCAL_VAR_PEAK / peak) if peak > 0 else np.zeros_like(x)
        else:
            var_map = np.asarray(model.var_map, dtype=np.float64)
            if var_map.shape != x.shape:
                raise DimMismatchError(
                    f"var_map shape {var_map.shape} != image shape {x.shape}"
                )
            if not np.all(np.isfinite(var_map)) or var_map.min() < 0:
                raise BadParamError("var_map entries must be finite and nonnegative")
        out = x + rng.standard_normal(x.shape) * np.sqrt(var_map)
    else:
        raise BadParamError(f"unknown noise model: {model!r}")

    return Image(
        pixels=np.clip(out, 0.0, 1.0),
        label=image.label,
        provenance=Noisy(model=model.name),
        image_id=image.image_id,
        meta=dict(image.meta),
    )


def sample_matched_magnitude(distances, seed: int) -> float:
    """Draw one value uniformly from an empirical distance sample."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyDistancesError("empty distance sample")
    if not np.all(np.isfinite(d)) or d.min() < 0:
        raise BadParamError("distances must be finite and nonnegative")
    rng = np.random.default_rng(seed)
    return float(d[rng.integers(0, d.size)])


def perturb_to_magnitude(image: Image, l2_target: float, seed: int) -> Image:
    """Add an isotropic random perturbation with a prescribed l2 norm.

    The direction is uniform on the sphere (normalized Gaussian draw) and the
    perturbation has norm ``l2_target`` exactly, before clipping to [0, 1].
    The achieved post-clip norm is recorded in ``meta["post_clip_l2"]``.
    """
    if not (np.isfinite(l2_target) and l2_target >= 0.0):
        raise BadParamError(f"l2_target must be finite and >= 0, got {l2_target}")
    x = image.pixels
    rng = np.random.default_rng(seed)
    if l2_target == 0.0:
        out = x.copy()
    else:
        direction = rng.standard_normal(x.shape)
        norm = np.linalg.norm(direction)
        while norm == 0.0:  # essentially impossible, but keeps the contract total
            direction = rng.standard_normal(x.shape)
            norm = np.linalg.norm(direction)
        out = np.clip(x + direction * (l2_target / norm), 0.0, 1.0)
    meta = dict(image.meta)
    meta["l2_target"] = float(l2_target)
    meta["post_clip_l2"] = float(np.linalg.norm(out - x))
    return Image(
        pixels=out,
        label=image.label,
        provenance=Noisy(model="matched_l2"),
        image_id=image.image_id,
        meta=meta,
    )


def noise_from_config(block: dict) -> NoiseModel:
    """Build a noise model from a JSON config block {"kind": ..., params}."""
    if not isinstance(block, dict) or "kind" not in block:
        raise BadParamError("noise block needs a 'kind' field")
    kind = block["kind"]
    params = {k: v for k, v in block.items() if k not in ("kind", "seed")}
    builders = {
        "gaussian": Gaussian,
        "pepper": Pepper,
        "salt": Salt,
        "salt_and_pepper": SaltAndPepper,
        "poisson": Poisson,
        "speckle": Speckle,
        "local_var_gaussian": LocalVarGaussian,
    }
    if kind not in builders:
        raise BadParamError(f"unknown noise kind {kind!r}")
    try:
        return builders[kind](**params)
    except TypeError as exc:
        raise BadParamError(f"bad parameters for noise kind {kind!r}: {exc}")
