"""Named models, coefficients, penalties and experiment configs.

User preset files are JSON objects with any of the sections ``models``,
``coefficients``, ``penalties``, ``finite_penalties``, ``spaces`` and
``experiments``; their entries are merged over the bundled ones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density_engine import GirsanovCoefficients
from .finite_duality import FiniteSpace
from .levy_model import LevyTriplet
from .penalty_risk import PenaltySpec

SECTIONS = ("models", "coefficients", "penalties", "finite_penalties", "spaces", "experiments")


class ConfigError(ValueError):
    pass


BUNDLED: dict[str, dict[str, dict]] = {
    "models": {
        "brownian": {"drift": 0.0, "brownian": True, "atoms": [],
                     "about": "b=0, unit Brownian part, nu=0 (Levy-Ito decomposition, no jumps)"},
        "two_atom": {"drift": 0.0, "brownian": True, "atoms": [[-0.5, 1.0], [1.0, 0.5]],
                     "about": "Brownian part plus atoms (-0.5, 1) and (1, 0.5)"},
        "single_atom": {"drift": 0.0, "brownian": False, "atoms": [[1.0, 1.0]],
                        "about": "pure jump, one atom (1, 1)"},
        "poisson2": {"drift": 0.0, "brownian": False, "atoms": [[1.0, 2.0]],
                     "about": "pure jump, one atom (1, 2)"},
    },
    "coefficients": {
        "zero": {"kind": "const", "theta0": 0.0, "theta1": 0.0,
                 "about": "theta = 0, density identically 1 (Q = P)"},
        "bounded": {"kind": "const", "theta0": 0.5, "theta1": 0.2,
                    "about": "constant (0.5, 0.2); bounded coefficients give a true martingale"},
        "kill": {"kind": "const", "theta0": 0.0, "theta1": -1.0,
                 "about": "theta1 = -1: density dies at the first jump (tau0)"},
    },
    "penalties": {
        "entropic": {"kind": "entropic", "delta": 1.0,
                     "about": "h = id, h0 = u^2/2, h1 = (1+u)ln(1+u)-u: relative entropy"},
        "quadratic": {"kind": "quadratic", "delta": 1.0,
                      "about": "h = id, h0 = h1 = u^2/2"},
    },
    "finite_penalties": {
        "zero": {"about": "psi = 0 on all Q << P; induces the worst-case measure"},
        "worst_case": {"about": "0 on Q << P, +inf otherwise; minimal penalty of -min X"},
        "entropic": {"about": "entropic:<gamma>, (1/gamma) H(Q|P); induces (1/gamma) ln E[exp(-gamma X)]"},
        "linear": {"about": "linear:<c1>,...,<cn>, psi(Q) = E_Q[c]"},
    },
    "spaces": {
        "uniform3": {"atoms": ["w0", "w1", "w2"], "weights": [1 / 3, 1 / 3, 1 / 3],
                     "about": "three equally likely scenarios"},
        "skewed4": {"atoms": ["w0", "w1", "w2", "w3"], "weights": [0.1, 0.2, 0.3, 0.4],
                    "about": "four scenarios with unequal weights"},
    },
    "experiments": {
        "worst_case_3pt": {
            "experiment": "finite-duality", "space": "uniform3", "penalty": "worst_case",
            "densities": {"grid": 4}, "tolerance": 1e-6,
            "about": "minimal penalty of the worst-case measure vanishes on Q << P"},
        "entropic_4pt": {
            "experiment": "finite-duality", "space": "skewed4", "penalty": "entropic:1",
            "densities": {"random": 5}, "biconjugate": True, "tolerance": 1e-4,
            "about": "entropic penalty: minimal penalty and biconjugate both recover H(Q|P)"},
        "martingale_zero": {
            "experiment": "martingale", "model": "two_atom", "theta": "zero",
            "times": [0.25, 0.5, 1.0], "n_paths": 2000,
            "about": "theta = 0 gives D = 1 on every path"},
        "martingale_bounded": {
            "experiment": "martingale", "model": "two_atom", "theta": "bounded",
            "times": [1.0], "n_paths": 100000,
            "about": "E_P[E(Z^theta)_t] = 1 for bounded coefficients"},
        "compensator_bounded": {
            "experiment": "compensator", "model": "two_atom", "theta": "bounded", "atom": 1,
            "n_paths": 100000,
            "about": "Q-compensator of an atom is (1 + theta1) lam"},
        "qv_constant": {
            "experiment": "qv-convergence", "model": "brownian", "theta": "const:0.3,0",
            "sequence": {"rule": "constant"}, "n_values": [1, 2, 4], "epsilon": 0.01,
            "n_paths": 2000,
            "about": "constant sequence: both columns identically zero"},
        "qv_brownian": {
            "experiment": "qv-convergence", "model": "brownian", "theta": "const:0.3,0",
            "sequence": {"rule": "theta0_plus_inv_n"}, "n_values": [1, 2, 4, 8, 16, 32],
            "epsilon": 0.01, "n_paths": 10000, "steps": 100,
            "about": "theta0^n = theta0 + 1/n: L1 and QV exceedance both shrink"},
        "penalty_entropic": {
            "experiment": "penalty", "model": "brownian", "theta": "const:0.5,0",
            "penalty": "entropic", "n_paths": 20000,
            "about": "entropic penalty of a Brownian drift c is c^2 T / 2"},
        "risk_entropic": {
            "experiment": "risk", "model": "brownian", "penalty": "entropic",
            "position": {"kind": "linear_brownian", "scale": 0.5}, "clip": 8.0,
            "family": {"theta0": [-1.0, 1.0, 21]}, "budget": 61, "n_paths": 100000,
            "expected": {"value": 0.125, "tolerance": 0.002},
            "about": "entropic risk of 0.5 W_T is 0.125"},
        "convexity_entropic": {
            "experiment": "convexity", "model": "two_atom", "penalty": "entropic",
            "trials": 10, "n_paths": 5000, "min_pass_fraction": 0.96,
            "about": "penalty of a mixture is at most the mixture of penalties"},
        "minimality_entropic": {
            "experiment": "minimality", "model": "brownian", "penalty": "entropic",
            "thetas": [[0.0, 0.0], [0.2, 0.0], [0.5, 0.0]], "levels": [1, 2, 3, 4],
            "bound": 1.0, "family": {"theta0": [-1.0, 1.0, 41]}, "n_paths": 5000,
            "about": "biduality lower bound approaches the penalty from below"},
    },
}


def model_from(obj) -> LevyTriplet:
    if isinstance(obj, str):
        if obj not in BUNDLED["models"]:
            raise ConfigError(f"unknown model preset {obj!r}")
        obj = BUNDLED["models"][obj]
    if not isinstance(obj, dict):
        raise ConfigError("model must be a preset name or an object")
    try:
        return LevyTriplet.from_atoms([tuple(a) for a in obj.get("atoms", [])],
                                      drift=obj.get("drift", 0.0),
                                      brownian=obj.get("brownian", True))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def coefficients_from(obj) -> GirsanovCoefficients:
    """Preset name, ``"const:a,b"``, ``"linear-in-t:a0,b0,a1,b1"`` or an object."""
    if isinstance(obj, str):
        kind, _, arg = obj.partition(":")
        if arg:
            try:
                vals = [float(v) for v in arg.split(",")]
            except ValueError as exc:
                raise ConfigError(f"bad coefficient preset {obj!r}") from exc
            if kind == "const" and len(vals) == 2:
                return GirsanovCoefficients.constant(*vals)
            if kind == "linear-in-t" and len(vals) == 4:
                return GirsanovCoefficients.linear_in_t(*vals)
            raise ConfigError(f"bad coefficient preset {obj!r}")
        if obj not in BUNDLED["coefficients"]:
            raise ConfigError(f"unknown coefficient preset {obj!r}")
        obj = BUNDLED["coefficients"][obj]
    if not isinstance(obj, dict):
        raise ConfigError("theta must be a preset name or an object")
    kind = obj.get("kind", "const")
    try:
        if kind == "const":
            return GirsanovCoefficients.constant(float(obj.get("theta0", 0.0)),
                                                 float(obj.get("theta1", 0.0)))
        if kind == "linear-in-t":
            return GirsanovCoefficients.linear_in_t(*(float(obj[k]) for k in ("a0", "b0", "a1", "b1")))
        if kind == "per-atom":
            table = {float(k): float(v) for k, v in obj["table"]}
            return GirsanovCoefficients.per_atom(float(obj.get("theta0", 0.0)), table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid coefficients: {exc}") from exc
    raise ConfigError(f"unknown coefficient kind {kind!r}")


def penalty_spec_from(obj) -> PenaltySpec:
    if isinstance(obj, str):
        if obj not in BUNDLED["penalties"]:
            raise ConfigError(f"unknown penalty preset {obj!r}")
        obj = BUNDLED["penalties"][obj]
    if not isinstance(obj, dict):
        raise ConfigError("penalty must be a preset name or an object")
    kind = obj.get("kind")
    delta = obj.get("delta", 1.0)
    if isinstance(delta, list):
        delta = {float(k): float(v) for k, v in delta}
    try:
        if kind == "entropic":
            return PenaltySpec.entropic(delta)
        if kind == "quadratic":
            return PenaltySpec.quadratic(delta)
        if kind == "custom":
            return PenaltySpec.custom(obj["h"], obj["h0"], obj["h1"], delta)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid penalty spec: {exc}") from exc
    raise ConfigError(f"unknown penalty kind {kind!r}")


def space_from(obj) -> FiniteSpace:
    if isinstance(obj, str):
        if obj not in BUNDLED["spaces"]:
            raise ConfigError(f"unknown space preset {obj!r}")
        obj = BUNDLED["spaces"][obj]
    try:
        return FiniteSpace(tuple(obj["atoms"]), np.asarray(obj["weights"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid finite space: {exc}") from exc


def experiment_from(name: str) -> dict:
    if name not in BUNDLED["experiments"]:
        raise ConfigError(f"unknown experiment preset {name!r}")
    cfg = dict(BUNDLED["experiments"][name])
    cfg.pop("about", None)
    return cfg


@dataclass
class PresetListing:
    entries: dict[str, dict[str, str]] = field(default_factory=dict)
    invalid: list[tuple[str, str]] = field(default_factory=list)

    def render(self) -> str:
        lines = []
        for section in SECTIONS:
            items = self.entries.get(section, {})
            if not items:
                continue
            lines.append(f"[{section}]")
            for name in sorted(items):
                lines.append(f"  {name:22s} {items[name]}")
        if self.invalid:
            lines.append("[invalid]")
            for src, reason in self.invalid:
                lines.append(f"  {src}: {reason}")
        return "\n".join(lines) + "\n"


_VALIDATORS = {
    "models": model_from,
    "coefficients": coefficients_from,
    "penalties": penalty_spec_from,
    "spaces": space_from,
}


def load_user_presets(path) -> dict:
    """Parse and validate a preset file; raises :class:`ConfigError` with a reason."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    for section, items in data.items():
        if not isinstance(items, dict):
            raise ConfigError(f"section {section!r} must be an object")
        check = _VALIDATORS.get(section)
        for name, body in items.items():
            if check is not None:
                try:
                    check(body)
                except ConfigError as exc:
                    raise ConfigError(f"{section}.{name}: {exc}") from exc
            if section == "experiments" and "experiment" not in body:
                raise ConfigError(f"experiments.{name}: missing 'experiment' kind")
    return data


def register(data: dict) -> None:
    for section, items in data.items():
        BUNDLED.setdefault(section, {}).update(items)


def list_presets(extra_files=()) -> str:
    listing = PresetListing()
    for section in SECTIONS:
        listing.entries[section] = {k: v.get("about", "") for k, v in BUNDLED[section].items()}
    for path in extra_files:
        try:
            data = load_user_presets(path)
        except ConfigError as exc:
            listing.invalid.append((str(path), str(exc)))
            continue
        for section, items in data.items():
            for name, body in items.items():
                listing.entries[section][name] = body.get("about", f"user preset from {path}")
    return listing.render()
