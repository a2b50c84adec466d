"""Config loading: TOML or JSON, optional `base` inheritance, strict key checks."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from segue.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Keys given as "a/b" strings are read as fractions, e.g. epsilon = "8/255".
FRACTION_KEYS = {"epsilon", "rho_d", "rho_a", "rue_rho_a"}


def _parse_text(text: str, fmt: str, origin: str) -> dict:
    try:
        return tomllib.loads(text) if fmt == "toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {origin}: {exc}") from exc


def shipped(name: str) -> dict:
    try:
        text = resources.files("segue.configs").joinpath(f"{name}.toml").read_text()
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(f"no shipped config named {name!r}", key="base") from exc
    return _parse_text(text, "toml", name)


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _missing(reference: dict, doc: dict, prefix=""):
    for k, v in reference.items():
        if k not in doc:
            yield prefix + k
        elif isinstance(v, dict) and isinstance(doc[k], dict):
            yield from _missing(v, doc[k], f"{prefix}{k}.")


def _unknown(reference: dict, doc: dict, prefix=""):
    for k, v in doc.items():
        if k not in reference:
            yield prefix + k
        elif isinstance(v, dict) and isinstance(reference[k], dict):
            yield from _unknown(reference[k], v, f"{prefix}{k}.")


def _fractions(doc):
    for k, v in doc.items():
        if isinstance(v, dict):
            _fractions(v)
        elif k in FRACTION_KEYS and isinstance(v, str):
            try:
                doc[k] = float(Fraction(v.replace(" ", "")))
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"{k} = {v!r} is not a number or fraction", key=k) from exc
    return doc


def resolve(doc: dict, sections=None) -> dict:
    """Apply `base` inheritance, check keys against the shipped defaults, parse fractions.

    Without a `base`, the document must be complete for the requested `sections`
    (all of them by default); a missing key raises ConfigError naming it.
    """
    doc = dict(doc)
    reference = shipped("paper_defaults")
    base = doc.pop("base", None)
    extra = {k: doc.pop(k) for k in ("data",) if k in doc}
    unknown = list(_unknown(reference, doc))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}", key=unknown[0])
    if base is not None:
        doc = merge(shipped(base), doc)
    else:
        wanted = {k: v for k, v in reference.items() if sections is None or k in sections}
        missing = list(_missing(wanted, doc))
        if missing:
            raise ConfigError(f"missing config key {missing[0]!r}", key=missing[0].split(".")[-1])
    doc.update(extra)
    return _fractions(doc)


def load_config(path=None, sections=None) -> dict:
    """Read a TOML (default) or JSON config; no path means the shipped defaults."""
    if path is None:
        return resolve({"base": "paper_defaults"})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", key="config") from exc
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return resolve(_parse_text(text, fmt, str(path)), sections)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
