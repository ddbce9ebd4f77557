"""Experiment configuration files.

One INI file per experiment::

    [experiment]
    kind = gaffney
    expect = pass
    seed = 0
    output = out/gaffney_flat

    [domain]
    name = flat

    [quadrature]
    resolutions = 8, 16, 32

Optional sections: ``[coefficient]`` and ``[mu]`` (name plus parameters),
``[diffeo]`` (name plus parameters), ``[fields] basket = ...``,
``[params]`` (experiment-specific values) and ``[tolerances]``.  Values
are parsed as Python literals where possible.  Catalog names are checked
when the file is read.
"""

from __future__ import annotations

import ast
import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .diffeo import DIFFEO_CATALOG
from .errors import CatalogError, ConfigError
from .fields import COEFFICIENT_CATALOG, FIELD_PROFILES
from .geometry import GRAPH_CATALOG

KINDS = ("ebc", "mollify", "lemma31", "gaffney", "electric", "pullback", "estimate-sweep", "w23probe")

OUTPUT_ENV = "MAXREG_OUTPUT_DIR"


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    return text


def _as_tuple(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


@dataclass(frozen=True)
class NamedSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    expect: str = "pass"
    seed: int = 0
    output: str | None = None
    domain: NamedSpec = NamedSpec("flat")
    coefficient: NamedSpec = NamedSpec("identity")
    mu: NamedSpec | None = None
    diffeo: NamedSpec | None = None
    basket: tuple[str, ...] = FIELD_PROFILES
    resolutions: tuple[int, ...] = (8,)
    order: int = 2
    rho: float = 1.0
    height: float = 2.0
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Plain-data view of the configuration for reports."""

        def named(n: NamedSpec | None):
            return None if n is None else {"name": n.name, "params": _plain(n.params)}

        return {
            "kind": self.kind,
            "expect": self.expect,
            "seed": self.seed,
            "domain": named(self.domain),
            "coefficient": named(self.coefficient),
            "mu": named(self.mu),
            "diffeo": named(self.diffeo),
            "basket": list(self.basket),
            "resolutions": list(self.resolutions),
            "order": self.order,
            "rho": self.rho,
            "height": self.height,
            "params": _plain(self.params),
            "tolerances": _plain(self.tolerances),
        }

    def output_prefix(self) -> Path | None:
        if self.output is None:
            return None
        path = Path(self.output)
        override = os.environ.get(OUTPUT_ENV)
        if override:
            path = Path(override) / path.name
        return path


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in sorted(d.items())}
    if isinstance(d, (list, tuple)):
        return [_plain(v) for v in d]
    return d


def _check_name(kind: str, name: str, catalog) -> None:
    if name not in catalog:
        raise CatalogError(f"unknown {kind} {name!r}; valid names: {', '.join(sorted(catalog))}")


def _named(cp: configparser.ConfigParser, section: str, kind: str, catalog) -> NamedSpec | None:
    if not cp.has_section(section):
        return None
    items = {k: parse_value(v) for k, v in cp.items(section)}
    if "name" not in items:
        raise ConfigError(f"section [{section}] needs a 'name' key")
    name = str(items.pop("name"))
    _check_name(kind, name, catalog)
    return NamedSpec(name, items)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep parameter names such as A as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = {k: parse_value(v) for k, v in cp.items("experiment")}
    kind = str(exp.get("kind", ""))
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    expect = str(exp.get("expect", "pass"))
    if expect not in ("pass", "fail"):
        raise ConfigError("expect must be 'pass' or 'fail'")
    seed = exp.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")

    domain = _named(cp, "domain", "domain", GRAPH_CATALOG) or NamedSpec("flat")
    coef = _named(cp, "coefficient", "coefficient", COEFFICIENT_CATALOG) or NamedSpec("identity")
    mu = _named(cp, "mu", "coefficient", COEFFICIENT_CATALOG)
    diffeo = _named(cp, "diffeo", "diffeomorphism", DIFFEO_CATALOG)

    basket = FIELD_PROFILES
    if cp.has_section("fields") and cp.has_option("fields", "basket"):
        basket = tuple(str(b) for b in _as_tuple(parse_value(cp.get("fields", "basket"))))
        for b in basket:
            _check_name("field", b, FIELD_PROFILES)

    quad = {k: parse_value(v) for k, v in cp.items("quadrature")} if cp.has_section("quadrature") else {}
    resolutions = tuple(_as_tuple(quad.get("resolutions", 8)))
    if not resolutions or not all(isinstance(r, int) and r >= 2 for r in resolutions):
        raise ConfigError("resolutions must be integers >= 2")
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ConfigError("resolutions must be strictly increasing")

    params = {k: parse_value(v) for k, v in cp.items("params")} if cp.has_section("params") else {}
    tols = {k: parse_value(v) for k, v in cp.items("tolerances")} if cp.has_section("tolerances") else {}
    for k, v in tols.items():
        if not isinstance(v, (int, float)):
            raise ConfigError(f"tolerance {k!r} must be numeric")
    try:
        return ExperimentConfig(
            kind=kind,
            expect=expect,
            seed=seed,
            output=None if exp.get("output") is None else str(exp["output"]),
            domain=domain,
            coefficient=coef,
            mu=mu,
            diffeo=diffeo,
            basket=basket,
            resolutions=resolutions,
            order=int(quad.get("order", 2)),
            rho=float(quad.get("rho", 1.0)),
            height=float(quad.get("height", 2.0)),
            params=params,
            tolerances=tols,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
