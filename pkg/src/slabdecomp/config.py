"""JSON run configuration: schema validation and construction of domain objects.

See ``docs/config.md`` for the key reference.
"""

import json
import math

import jsonschema
import numpy as np

from .errors import ConfigError
from .feasibility import CAP_FACTOR, GRID_POINTS
from .priors import (CorrelatedGaussian, GaussianSlab, IidGaussian, LaplaceSlab,
                     SpikeSlabPrior, simulate)
from .samplers import HMC, MALA, ChainConfig, RejectionPolicy

DEFAULT_SAMPLES = 1000

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_SEED = {"type": "integer", "minimum": 0}

_AXIS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": ["delta", "sigma0", "q"]},
        "values": {"type": "array", "items": _POS, "minItems": 1},
        "min": _POS,
        "max": _POS,
        "num": _POS_INT,
        "scale": {"enum": ["linear", "log"]},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "d", "q", "slab", "design"],
            "properties": {
                "n": _POS_INT,
                "d": _POS_INT,
                "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "slab": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["gaussian", "laplace"]},
                        "params": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {"variance": _POS, "rate": _POS},
                        },
                    },
                },
                "sigma_d": _POS,
                "sigma0": _POS,
                "design": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["iid_gaussian", "correlated_gaussian"]},
                        "variance": _POS,
                        "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    },
                },
                "seed": _SEED,
            },
        },
        "decomposition": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"oneOf": [_POS, {"type": "string", "pattern": r"^auto(\+[0-9.eE+-]+)?$"}]},
            },
        },
        "feasibility": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grid_points": _POS_INT, "cap_factor": _POS},
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["method"],
            "properties": {
                "method": {"enum": ["mala", "hmc"]},
                "tau": _POS,
                "epsilon": _POS,
                "ell": _POS_INT,
                "mass": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "K": _POS_INT,
                "B": _NONNEG_INT,
                "thinning": _POS_INT,
                "rejection_policy": {"enum": [p.value for p in RejectionPolicy]},
                "init_smoothness": _POS,
                "seed": _SEED,
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "repetitions": _POS_INT,
                "samples": _NONNEG_INT,
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "force": {"type": "boolean"},
                "seed": _SEED,
            },
        },
        "region": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis1", "axis2"],
            "properties": {
                "axis1": _AXIS,
                "axis2": _AXIS,
                "fixed": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"delta": _POS, "sigma0": _POS, "q": _POS},
                },
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grid_points": {"type": "integer", "minimum": 2}},
        },
    },
}


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    validate(doc)
    return doc


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    model = doc["model"]
    if ("sigma_d" in model) == ("sigma0" in model):
        raise ConfigError("model must set exactly one of sigma_d and sigma0")
    # construct everything once so domain constraints are checked at parse time
    prior(doc)
    design(doc)
    if "sampler" in doc:
        chain_config(doc, seed=0)
    gamma_spec(doc)
    if "region" in doc:
        region_axes(doc)


def prior(doc):
    m = doc["model"]
    params = m["slab"].get("params", {})
    kind = m["slab"]["kind"]
    extra = set(params) - ({"variance"} if kind == "gaussian" else {"rate"})
    if extra:
        raise ConfigError(f"slab kind {kind!r} does not take {sorted(extra)}")
    slab = (GaussianSlab(params.get("variance", 1.0)) if kind == "gaussian"
            else LaplaceSlab(params.get("rate", math.sqrt(2.0))))
    return SpikeSlabPrior(m["q"], slab)


def design(doc):
    spec = doc["model"]["design"]
    if spec["kind"] == "iid_gaussian":
        if "rho" in spec:
            raise ConfigError("iid_gaussian design does not take rho")
        return IidGaussian(spec.get("variance", 1.0))
    if "variance" in spec:
        raise ConfigError("correlated_gaussian design does not take variance")
    return CorrelatedGaussian(spec.get("rho", 0.0))


def noise_std(doc):
    m = doc["model"]
    return float(m["sigma_d"]) if "sigma_d" in m else float(m["sigma0"]) * math.sqrt(m["d"])


def data_seed(doc, seed):
    return doc["model"].get("seed", seed)


def instance(doc, seed):
    """Simulated ``(theta, RegressionInstance)`` for the configured model."""
    m = doc["model"]
    return simulate(prior(doc), design(doc), m["n"], m["d"], noise_std(doc), data_seed(doc, seed))


def gamma_spec(doc):
    """``(gamma, offset)``: an explicit shift, or ``None`` with the offset above lambda_max."""
    g = doc.get("decomposition", {}).get("gamma", "auto+0.1")
    if isinstance(g, str):
        try:
            offset = float(g[len("auto+"):]) if g.startswith("auto+") else 0.1
        except ValueError:
            raise ConfigError(f"invalid gamma offset in {g!r}") from None
        if not (math.isfinite(offset) and offset > 0):
            raise ConfigError(f"invalid gamma offset in {g!r}")
        return None, offset
    return float(g), 0.1


def sample_count(doc, chain=None, default=DEFAULT_SAMPLES):
    """Retained draws: ``experiment.samples``, else implied by ``sampler.K``, else ``default``.

    ``chain`` is the resolved :class:`ChainConfig`, needed when ``K`` is set.
    """
    samples = doc.get("experiment", {}).get("samples")
    if samples is not None:
        return samples
    if chain is not None and "K" in doc.get("sampler", {}):
        return chain.retained
    return default


def feasibility_options(doc):
    f = doc.get("feasibility", {})
    return {"points": f.get("grid_points", GRID_POINTS), "cap_factor": f.get("cap_factor", CAP_FACTOR)}


def chain_config(doc, seed, default_burn_in=10_000):
    s = doc.get("sampler")
    if s is None:
        raise ConfigError("config has no sampler section")
    if s["method"] == "mala":
        if "tau" not in s or {"epsilon", "ell", "mass"} & set(s):
            raise ConfigError("mala sampler needs tau (and no epsilon/ell/mass)")
        method = MALA(s["tau"])
    else:
        if "epsilon" not in s or "ell" not in s or "tau" in s:
            raise ConfigError("hmc sampler needs epsilon and ell (and no tau)")
        method = HMC(s["epsilon"], s["ell"], None if "mass" not in s else np.array(s["mass"]))
    burn = s.get("B", default_burn_in)
    thin = s.get("thinning", 1)
    samples = doc.get("experiment", {}).get("samples")
    if "K" in s and samples is not None and s["K"] != burn + samples * thin:
        raise ConfigError("sampler.K must equal B + experiment.samples * thinning when both are set")
    total = s.get("K", burn + (DEFAULT_SAMPLES if samples is None else samples) * thin)
    return ChainConfig(method, total_steps=total, burn_in=burn, thinning=s.get("thinning", 1),
                       rejection_policy=s.get("rejection_policy", "stay_on_reject"),
                       seed=s.get("seed", seed),
                       init_smoothness=s.get("init_smoothness", 10.0))


def _axis_values(axis):
    if "values" in axis:
        if {"min", "max", "num", "scale"} & set(axis):
            raise ConfigError("axis takes either values or min/max/num")
        return axis["values"]
    if not {"min", "max", "num"} <= set(axis):
        raise ConfigError("axis needs values or min, max and num")
    if axis["max"] < axis["min"]:
        raise ConfigError("axis max must not be below min")
    space = np.geomspace if axis.get("scale", "linear") == "log" else np.linspace
    return space(axis["min"], axis["max"], axis["num"]).tolist()


def region_axes(doc):
    r = doc.get("region")
    if r is None:
        raise ConfigError("config has no region section")
    a1, a2 = r["axis1"], r["axis2"]
    if a1["name"] == a2["name"]:
        raise ConfigError("region axes must differ")
    v1, v2 = _axis_values(a1), _axis_values(a2)
    if len(v1) * len(v2) > 10**6:
        raise ConfigError("region grid exceeds 1e6 points")
    if "q" in (a1["name"], a2["name"]) and any(not 0 < v < 1 for v in (v1 if a1["name"] == "q" else v2)):
        raise ConfigError("q axis values must lie in (0, 1)")
    fixed = dict(r.get("fixed", {}))
    needed = {"delta", "sigma0", "q"} - {a1["name"], a2["name"]}
    if "q" in needed and "q" not in fixed:
        fixed["q"] = doc["model"]["q"]
    missing = needed - set(fixed)
    if missing:
        raise ConfigError(f"region.fixed must set {sorted(missing)}")
    return (a1["name"], v1), (a2["name"], v2), fixed

