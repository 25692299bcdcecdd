"""Built-in model families, parameter round-tripping, and YAML IO.

A model bundles a truncated-stable driving measure with a jump amplitude of
product form ``c(s, z, x) = sigma(x) * z``.  Two families ship:

``sine``
    ``sigma(x) = base + amplitude * sin(x)``.  Bounded, smooth, uniformly
    elliptic when ``amplitude < base``, and with invertible tangent jumps
    when ``amplitude < 1``.  This is the workhorse for every rate and
    covariance experiment.
``constant``
    ``sigma(x) = scale``.  The driftless-in-x reference whose terminal mean
    and substitution coefficients have closed forms; used by calibration
    tests and as the bare (``scale = 1``) CLI default.

Envelope conventions: the upper envelope is ``sigma_bar * max(1/v, 6/v**4)``,
which dominates every mixed partial of the transformed amplitude up to order
three (the ``v``-derivative of order ``q`` carries a factor ``q!/v**(q+1)``,
worst at ``q = 3`` near ``v = 1``) yet equals ``sigma_bar / v`` for
``v >= 6**(1/3)``, i.e. on the whole small-jump region of every experiment
here, so moment scales keep their power-law closed forms.
"""

from __future__ import annotations

import numpy as np
import yaml

from .measure import (
    JumpCoefficient,
    LevyModel,
    SectorParams,
    transform_measure,
    truncated_stable,
)

__all__ = [
    "make_sine_model",
    "make_constant_model",
    "model_from_params",
    "model_to_params",
    "load_model",
    "save_model",
    "FAMILIES",
]


def _sector_from_params(d: dict | None) -> SectorParams:
    if not d:
        return SectorParams()
    return SectorParams(**d)


def _sector_to_params(s: SectorParams) -> dict:
    out = {"variant": s.variant, "eps_star": s.eps_star, "alpha": s.alpha}
    if s.variant == "strong":
        out["alpha1"] = s.alpha1
        out["alpha2"] = s.alpha2
        if s.alpha0 is not None:
            out["alpha0"] = s.alpha0
    return out


def _separable_coefficient(sigma_funcs, sigma_bar: float, sigma_under: float,
                           breve=None) -> JumpCoefficient:
    sigma, d1, d2, d3 = sigma_funcs

    def c(s, z, x):
        return sigma(x) * np.asarray(z, dtype=float)

    partials = {
        (1, 0): lambda s, z, x: d1(x) * np.asarray(z, dtype=float),
        (2, 0): lambda s, z, x: d2(x) * np.asarray(z, dtype=float),
        (0, 1): lambda s, z, x: sigma(x) * np.ones_like(np.asarray(z, dtype=float)),
        (1, 1): lambda s, z, x: d1(x) * np.ones_like(np.asarray(z, dtype=float)),
        (0, 2): lambda s, z, x: np.zeros_like(np.asarray(z, dtype=float)),
    }

    def envelope_bar(v):
        v = np.asarray(v, dtype=float)
        return sigma_bar * np.maximum(1.0 / v, 6.0 / v**4)

    def envelope_under(v):
        v = np.asarray(v, dtype=float)
        return sigma_under**2 / v**4

    return JumpCoefficient(
        c=c, partials=partials,
        envelope_bar=envelope_bar,
        envelope_under=envelope_under,
        envelope_breve=breve,
        q_star=3,
        separable=(sigma, d1, d2, d3),
    )


def make_sine_model(rho: float = 0.5, base: float = 2.0, amplitude: float = 0.5,
                    sector: SectorParams | None = None, name: str | None = None) -> LevyModel:
    """Amplitude ``sigma(x) = base + amplitude * sin x`` over the stable measure.

    Requires ``0 <= amplitude < min(base, 1)``: below ``base`` for uniform
    ellipticity of ``sigma``, below one so that ``1 + dx c~ >= 1 - amplitude``
    keeps the tangent flow invertible for every jump.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if amplitude >= base:
        raise ValueError("need amplitude < base for a positive lower ellipticity bound")
    if amplitude >= 1:
        raise ValueError("need amplitude < 1 to keep tangent jump factors invertible")
    sigma_bar = base + amplitude
    sigma_under = base - amplitude

    def sigma(x):
        return base + amplitude * np.sin(x)

    def d1(x):
        return amplitude * np.cos(x)

    def d2(x):
        return -amplitude * np.sin(x)

    def d3(x):
        return -amplitude * np.cos(x)

    if amplitude > 0:
        def breve(v):
            v = np.asarray(v, dtype=float)
            return amplitude / (v - amplitude)
    else:
        breve = None

    coeff = _separable_coefficient((sigma, d1, d2, d3), sigma_bar, sigma_under, breve)
    mu = truncated_stable(rho)
    params = {"family": "sine", "rho": rho, "base": base, "amplitude": amplitude,
              "sector": _sector_to_params(sector or SectorParams())}
    model = LevyModel(mu=mu, nu=transform_measure(mu), coeff=coeff,
                      sector=sector or SectorParams(),
                      name=name or f"sine(rho={rho:g})", params=params)
    return model


def make_constant_model(rho: float = 0.5, scale: float = 1.0,
                        sector: SectorParams | None = None, name: str | None = None) -> LevyModel:
    """Amplitude ``sigma(x) = scale`` over the stable measure.

    With ``scale = 1`` the jump term is ``z`` itself and the terminal mean of
    the substituted path is ``x0 + T * int_(0,1] z mu(dz)`` exactly, which
    makes this family the calibration oracle.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")

    def sigma(x):
        return scale + 0.0 * np.asarray(x, dtype=float)

    def zero(x):
        return 0.0 * np.asarray(x, dtype=float)

    coeff = _separable_coefficient((sigma, zero, zero, zero), scale, scale)
    mu = truncated_stable(rho)
    params = {"family": "constant", "rho": rho, "scale": scale,
              "sector": _sector_to_params(sector or SectorParams())}
    return LevyModel(mu=mu, nu=transform_measure(mu), coeff=coeff,
                     sector=sector or SectorParams(),
                     name=name or f"constant(rho={rho:g})", params=params)


FAMILIES = {
    "sine": make_sine_model,
    "constant": make_constant_model,
}


def model_from_params(params: dict) -> LevyModel:
    """Rebuild a model from its parameter dict (inverse of ``model_to_params``).

    This is the constructor worker processes use: models carry closures, so
    the pool ships plain dicts and rebuilds on the far side.
    """
    d = dict(params)
    family = d.pop("family")
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; known: {sorted(FAMILIES)}")
    sector = _sector_from_params(d.pop("sector", None))
    name = d.pop("name", None)
    return FAMILIES[family](sector=sector, name=name, **d)


def model_to_params(model: LevyModel) -> dict:
    if model.params is None:
        raise ValueError(f"model {model.name!r} was built without a parameter dict")
    return dict(model.params)


def load_model(path: str) -> LevyModel:
    """Read a model description from a YAML file."""
    with open(path) as fh:
        params = yaml.safe_load(fh)
    if not isinstance(params, dict):
        raise ValueError(f"{path} does not contain a model mapping")
    return model_from_params(params)


def save_model(model: LevyModel, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_params(model), fh, sort_keys=False)
