"""Sequential Bayesian design of predator-prey functional-response experiments."""

import json

from ._frdesign import (
    SCHEMA_VERSION,
    ConflictError,
    InvalidParameter,
    ValidationError,
    expected_proportion,
    log_likelihood,
    static_utility,
)
from . import _frdesign

__all__ = [
    "SCHEMA_VERSION",
    "ConflictError",
    "InvalidParameter",
    "Session",
    "ValidationError",
    "expected_proportion",
    "log_likelihood",
    "simulate",
    "static_utility",
    "study",
    "summary_csv",
]


class Session:
    """A design session; settings use the same keys as the configuration files."""

    def __init__(self, config=None, _native=None):
        self._s = _native if _native is not None else _frdesign._Session(json.dumps(config or {}))

    @classmethod
    def from_dict(cls, document):
        return cls(_native=_frdesign._Session._from_json(json.dumps(document)))

    def to_dict(self):
        return json.loads(self._s._to_json())

    @property
    def status(self):
        return self._s.status()

    @property
    def model_probs(self):
        return self._s.model_probs()

    def propose(self):
        return json.loads(self._s.propose())

    def observe(self, d, n):
        return json.loads(self._s.observe(d, n))

    def history(self):
        return json.loads(self._s._history())


def simulate(config):
    """Runs a session against config["truth"] and returns its experiment records."""
    return json.loads(_frdesign._simulate(json.dumps(config)))


def study(manifest):
    """Runs a study manifest and returns its records, one dict per cell."""
    return [json.loads(line) for line in _frdesign._study(json.dumps(manifest)).splitlines()]


def summary_csv(records):
    return _frdesign._summary_csv("".join(json.dumps(r) + "\n" for r in records))
