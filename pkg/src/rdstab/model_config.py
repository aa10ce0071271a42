"""JSON model ingestion with line-anchored diagnostics.

A model document has the shape

    {
      "states": 2,
      "transition": [[0.98, 0.02], [0.02, 0.98]],
      "seed": 7,
      "market": {
        "K": 2,
        "r": 0.2,
        "dividends": [[0.95, 0.05], [0.05, 0.95]],
        "rival": [[0.5, 0.5], [0.5, 0.5]]
      }
    }

The benchmark strategy is always computed, never read from the file.
Validation either returns a fully constructed model or raises with the
complete list of diagnostics — a file never half-loads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import EnvironmentChain
from .errors import ConfigError, IrreducibilityError, ValidationError
from .market import SIMPLEX_TOL, MarketModel

MALFORMED_JSON = "MALFORMED_JSON"
MISSING_FIELD = "MISSING_FIELD"
BAD_TYPE = "BAD_TYPE"
BAD_VALUE = "BAD_VALUE"
NON_STOCHASTIC_ROW = "NON_STOCHASTIC_ROW"
NOT_IN_SIMPLEX = "NOT_IN_SIMPLEX"
REDUCIBLE_CHAIN = "REDUCIBLE_CHAIN"


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding, anchored to a line of the source file."""

    code: str
    message: str
    json_path: str
    line: int | None = None

    def __str__(self):
        where = f"{self.json_path}" + (f" (line {self.line})" if self.line else "")
        return f"{self.code} at {where}: {self.message}"


def _find_line(text: str, key: str) -> int | None:
    """Best-effort line anchor: first occurrence of the quoted key."""
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


class _Collector:
    def __init__(self, text: str):
        self.text = text
        self.diagnostics: list[Diagnostic] = []

    def add(self, code: str, message: str, json_path: str, anchor_key: str | None = None):
        line = _find_line(self.text, anchor_key) if anchor_key else None
        self.diagnostics.append(Diagnostic(code, message, json_path, line))

    def require(self, mapping: dict, key: str, kind, json_path: str):
        if key not in mapping:
            self.add(MISSING_FIELD, f"required field {key!r} is missing", json_path)
            return None
        value = mapping[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool):
            self.add(BAD_TYPE, f"{key!r} must be of type {kind.__name__}, "
                               f"got {type(value).__name__}", f"{json_path}.{key}",
                     anchor_key=key)
            return None
        return value


def _as_matrix(collector: _Collector, raw, rows: int, cols: int, key: str,
               json_path: str) -> np.ndarray | None:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        collector.add(BAD_TYPE, f"{key!r} must be a rectangular array of numbers",
                      json_path, anchor_key=key)
        return None
    if arr.shape != (rows, cols):
        collector.add(BAD_VALUE, f"{key!r} must have shape {(rows, cols)}, "
                                 f"got {arr.shape}", json_path, anchor_key=key)
        return None
    if not np.all(np.isfinite(arr)):
        collector.add(BAD_VALUE, f"{key!r} contains non-finite entries",
                      json_path, anchor_key=key)
        return None
    return arr


def _check_simplex(collector: _Collector, arr: np.ndarray, key: str, json_path: str) -> bool:
    ok = True
    if np.any(arr < 0.0):
        s, k = np.argwhere(arr < 0.0)[0]
        collector.add(NOT_IN_SIMPLEX, f"{key}[{s}][{k}] = {arr[s, k]:.17g} is negative",
                      json_path, anchor_key=key)
        ok = False
    err = np.abs(arr.sum(axis=1) - 1.0)
    if np.any(err > SIMPLEX_TOL):
        s = int(np.argmax(err))
        collector.add(NOT_IN_SIMPLEX,
                      f"{key} row {s} sums to {arr[s].sum():.17g}, not 1",
                      json_path, anchor_key=key)
        ok = False
    return ok


def validate_config(path) -> MarketModel:
    """Load and validate a JSON model file into a :class:`MarketModel`.

    Raises:
        ConfigError: carrying every diagnostic found; nothing is constructed
            unless the whole document validates.
    """
    text = Path(path).read_text()
    collector = _Collector(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        collector.add(MALFORMED_JSON, f"not valid JSON: {exc.msg}", "$")
        collector.diagnostics[-1] = Diagnostic(MALFORMED_JSON,
                                               f"not valid JSON: {exc.msg}",
                                               "$", exc.lineno)
        raise ConfigError(collector.diagnostics)
    if not isinstance(doc, dict):
        collector.add(BAD_TYPE, "top level must be a JSON object", "$")
        raise ConfigError(collector.diagnostics)

    states = collector.require(doc, "states", int, "$")
    seed = collector.require(doc, "seed", int, "$")
    transition_raw = collector.require(doc, "transition", list, "$")
    market_raw = collector.require(doc, "market", dict, "$")
    if collector.diagnostics:
        raise ConfigError(collector.diagnostics)
    if states < 1:
        collector.add(BAD_VALUE, f"states must be positive, got {states}", "$.states",
                      anchor_key="states")
        raise ConfigError(collector.diagnostics)

    transition = _as_matrix(collector, transition_raw, states, states,
                            "transition", "$.transition")
    chain = None
    if transition is not None:
        row_err = np.abs(transition.sum(axis=1) - 1.0)
        if np.any(transition < 0.0) or np.any(row_err > 1e-12):
            s = int(np.argmax(row_err)) if np.any(row_err > 1e-12) else \
                int(np.argwhere(transition < 0.0)[0][0])
            collector.add(NON_STOCHASTIC_ROW,
                          f"transition row {s} is not a probability vector "
                          f"(sum {transition[s].sum():.17g})",
                          "$.transition", anchor_key="transition")
        else:
            try:
                chain = EnvironmentChain(transition=transition, seed=seed)
            except IrreducibilityError as exc:
                collector.add(REDUCIBLE_CHAIN, str(exc), "$.transition",
                              anchor_key="transition")
            except ValidationError as exc:
                collector.add(BAD_VALUE, str(exc), "$.transition",
                              anchor_key="transition")

    K = collector.require(market_raw, "K", int, "$.market")
    r = collector.require(market_raw, "r", float, "$.market")
    dividends_raw = collector.require(market_raw, "dividends", list, "$.market")
    rival_raw = collector.require(market_raw, "rival", list, "$.market")
    if "kelly" in market_raw:
        collector.add(BAD_VALUE, "the benchmark strategy is computed, never ingested;"
                                 " remove the 'kelly' field", "$.market.kelly",
                      anchor_key="kelly")

    dividends = rival = None
    if K is not None and K >= 2 and dividends_raw is not None and rival_raw is not None:
        dividends = _as_matrix(collector, dividends_raw, states, K,
                               "dividends", "$.market.dividends")
        rival = _as_matrix(collector, rival_raw, states, K, "rival", "$.market.rival")
        if dividends is not None:
            _check_simplex(collector, dividends, "dividends", "$.market.dividends")
        if rival is not None:
            _check_simplex(collector, rival, "rival", "$.market.rival")
    elif K is not None and K < 2:
        collector.add(BAD_VALUE, f"K must be at least 2, got {K}", "$.market.K",
                      anchor_key="K")
    if r is not None and not 0.0 < r < 1.0:
        collector.add(BAD_VALUE, f"r must lie strictly in (0,1), got {r:.17g}",
                      "$.market.r", anchor_key="r")

    if collector.diagnostics:
        raise ConfigError(collector.diagnostics)
    try:
        return MarketModel(chain=chain, r=r, dividends=dividends, rival=rival)
    except ValidationError as exc:
        collector.add(BAD_VALUE, str(exc), "$.market")
        raise ConfigError(collector.diagnostics) from exc
