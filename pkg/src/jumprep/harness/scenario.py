"""JSON scenarios and payoffs.

A scenario file is an object with ``schema_version`` (currently 1), a model
``kind``, ``horizon``, ``grid_steps``, ``seed``, optional ``marks`` and a
``model`` block whose fields depend on the kind. Unknown fields are errors.
Payoff files carry their own ``schema_version`` and a ``type``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .._validation import ValidationError
from ..measure_core import NO_MARK, JumpLaw, MarkSpace

SCHEMA_VERSION = 1
KINDS = ("single_jump", "multi_jump", "truncation_family", "cox", "joint_diffusion", "discrete")


class ConfigError(ValidationError):
    """Scenario or payoff file is malformed or inconsistent."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer", "minimum": 1}
_NUMS = {"type": "array", "items": _NUM}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_MODEL_SCHEMAS = {
    "single_jump": {
        "oneOf": [
            _obj({"law": {"const": "exponential"}, "rate": _POS, "mark_probs": _NUMS},
                 ["law", "rate"]),
            _obj({"law": {"const": "uniform"}, "low": _NONNEG, "high": _POS, "mark_probs": _NUMS},
                 ["law", "low", "high"]),
            _obj({"law": {"const": "atoms"},
                  "atoms": {"type": "array", "items": {"type": "array", "minItems": 3, "maxItems": 3}}},
                 ["law", "atoms"]),
            _obj({"law": {"const": "none"}}, ["law"]),
        ]
    },
    "multi_jump": _obj({"rates": {"type": "array", "items": _NONNEG}, "max_jumps": _INT}, ["rates"]),
    "truncation_family": _obj({"value_ratio": _POS, "rate_ratio": _POS, "max_level": _INT}),
    "cox": _obj({"t": _NONNEG, "eps": _POS, "n": {"type": "array", "items": _POS, "minItems": 1},
                 "h": {"type": "array", "items": _POS, "minItems": 1}}),
    "joint_diffusion": _obj({"variance_rate": _NONNEG, "epochs": _NUMS, "variance_rates": _NUMS,
                             "jump_rates": {"type": "array", "items": _NONNEG}, "y0": _NUM,
                             "max_jumps": _INT}),
    "discrete": _obj({"num_slots": _INT, "probs": {"type": "array", "items": _NUMS},
                      "random_seed": {"type": "integer", "minimum": 0},
                      "history_dependent": {"type": "boolean"}, "single_jump": {"type": "boolean"}},
                     ["num_slots"]),
}

SCENARIO_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "kind": {"enum": list(KINDS)},
        "horizon": _POS,
        "grid_steps": _INT,
        "seed": {"type": "integer", "minimum": 0},
        "marks": _obj({"labels": {"type": "array", "items": {"type": "string"}}, "values": _NUMS},
                      ["values"]),
        "model": {"type": "object"},
    },
    ["schema_version", "kind", "horizon", "model"],
)

_FUNCTIONS = {
    "identity": lambda x: np.asarray(x, dtype=float),
    "square": lambda x: np.asarray(x, dtype=float) ** 2,
    "indicator_positive": lambda x: (np.asarray(x) > 1e-12).astype(float),
    "indicator_nonnegative": lambda x: (np.asarray(x) >= -1e-12).astype(float),
    "indicator_zero": lambda x: (np.abs(np.asarray(x)) <= 1e-12).astype(float),
}

_MARK_SUM = _obj({"type": {"const": "mark_sum"}, "function": {"enum": list(_FUNCTIONS)},
                  "weights": _NUMS, "drift": {"oneOf": [_NUM, {"const": "compensated"}]},
                  "x0": _NUM, "schema_version": {"const": SCHEMA_VERSION}},
                 ["type", "function"])
_TERMINAL = _obj({"type": {"const": "terminal"}, "function": {"enum": ["identity", "digital", "square_minus"]},
                  "strike": _NUM, "constant": _NUM, "schema_version": {"const": SCHEMA_VERSION}},
                 ["type", "function"])

PAYOFF_SCHEMA = {
    "oneOf": [
        _obj({"schema_version": {"const": SCHEMA_VERSION}, "type": {"const": "indicator_before"},
              "time": _NONNEG, "marks": {"type": "array"}}, ["type", "time"]),
        _obj({"schema_version": {"const": SCHEMA_VERSION}, "type": {"const": "constant"}, "value": _NUM},
             ["type", "value"]),
        _obj({"schema_version": {"const": SCHEMA_VERSION}, "type": {"const": "table"}, "times": _NUMS,
              "values": {"type": "array", "items": _NUMS}, "value_at_infinity": _NUM},
             ["type", "times", "values"]),
        _MARK_SUM,
        _TERMINAL,
        _obj({"schema_version": {"const": SCHEMA_VERSION}, "type": {"const": "product_sum"},
              "terms": {"type": "array", "minItems": 1, "items": _obj(
                  {"coef": _NUM, "continuous": {"oneOf": [{"type": "null"}, _TERMINAL]},
                   "jump": {"oneOf": [{"type": "null"}, _MARK_SUM]}})}},
             ["type", "terms"]),
    ]
}


def _validate(obj, schema, what):
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {exc.message} (at {loc})") from None


@dataclass
class Scenario:
    """Validated scenario; :meth:`build` returns the model object for its kind."""

    kind: str
    horizon: float
    model: dict
    grid_steps: int = 256
    seed: int | None = None
    marks: MarkSpace | None = None
    name: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("scenario must be a JSON object")
        _validate(obj, SCENARIO_SCHEMA, "scenario")
        kind = obj["kind"]
        _validate(obj["model"], _MODEL_SCHEMAS[kind], f"{kind} model")
        marks = None
        if "marks" in obj:
            vals = obj["marks"]["values"]
            labels = obj["marks"].get("labels")
            if labels is not None and len(labels) != len(vals):
                raise ConfigError("marks: labels and values differ in length")
            marks = MarkSpace.from_values(vals, labels)
        sc = cls(kind, float(obj["horizon"]), dict(obj["model"]), int(obj.get("grid_steps", 256)),
                 obj.get("seed"), marks, obj.get("name", ""), obj)
        sc._check_marks()
        return sc

    def _check_marks(self):
        m = self.model
        n = None if self.marks is None else len(self.marks)
        for key in ("mark_probs", "rates", "jump_rates"):
            if key in m and n is not None and len(m[key]) != n:
                raise ConfigError(f"model.{key} has {len(m[key])} entries for {n} marks")
        if self.kind in ("multi_jump", "joint_diffusion") and self.marks is None:
            if self.kind == "multi_jump" or "jump_rates" in m:
                raise ConfigError(f"{self.kind} scenarios need a marks block")
        if self.kind == "single_jump" and m["law"] == "atoms":
            space = self.mark_space(1)
            for atom in m["atoms"]:
                try:
                    space.index(atom[1])
                except (KeyError, ValueError, ValidationError):
                    raise ConfigError(f"atom mark {atom[1]!r} is not in the mark space") from None
        if self.kind == "discrete" and "probs" in m:
            if self.marks is None:
                raise ConfigError("discrete scenarios with explicit probs need a marks block")
            arr = np.asarray(m["probs"], dtype=float)
            if arr.shape != (m["num_slots"], n):
                raise ConfigError(f"model.probs must have shape ({m['num_slots']}, {n})")
        if self.kind == "joint_diffusion" and ("epochs" in m) != ("variance_rates" in m):
            raise ConfigError("epochs and variance_rates go together")

    @classmethod
    def load(cls, source):
        """From a path, a bundled scenario name, or an already parsed dict."""
        if isinstance(source, dict):
            return cls.from_dict(source)
        return cls.from_dict(_read_json(source, "scenario"))

    def require_seed(self, seed=None):
        seed = self.seed if seed is None else seed
        if seed is None:
            raise ConfigError("a seed is required for stochastic runs (scenario 'seed' or --seed)")
        return int(seed)

    def mark_space(self, default_size=1):
        if self.marks is not None:
            return self.marks
        return MarkSpace.from_values(np.ones(default_size))

    def build(self):
        from ..harness.discrete import DiscreteModel
        from ..jump_diffusion import DiffusionSpec, JointModel
        from ..multi_jump import CompoundPoissonModel, TruncationFamily

        m, T = self.model, self.horizon
        if self.kind == "single_jump":
            probs = m.get("mark_probs")
            marks = self.mark_space(len(probs) if probs else 1)
            if m["law"] == "exponential":
                return JumpLaw.exponential(m["rate"], T, probs, marks, grid_steps=self.grid_steps)
            if m["law"] == "uniform":
                return JumpLaw.uniform(m["low"], m["high"], T, probs, marks, grid_steps=self.grid_steps)
            if m["law"] == "atoms":
                return JumpLaw.from_atoms(marks, [tuple(a) for a in m["atoms"]], T, grid_steps=self.grid_steps)
            return JumpLaw.from_atoms(marks, [], T, mass_at_infinity=1.0, grid_steps=self.grid_steps)
        if self.kind == "multi_jump":
            return CompoundPoissonModel(self.marks, m["rates"], T, m.get("max_jumps"))
        if self.kind == "truncation_family":
            return TruncationFamily.geometric(m.get("value_ratio", 0.5), m.get("rate_ratio", 1.5), T,
                                              m.get("max_level", 40))
        if self.kind == "cox":
            return dict(t=m.get("t", 1.0), eps=m.get("eps", 0.5), n=m.get("n", [1e2, 1e3, 1e4]),
                        h=m.get("h", [0.01]))
        if self.kind == "joint_diffusion":
            if "epochs" in m:
                spec = DiffusionSpec.piecewise(m["epochs"], m["variance_rates"], T, self.grid_steps)
            else:
                spec = DiffusionSpec.brownian(T, m.get("variance_rate", 1.0), self.grid_steps)
            jumps = None
            if "jump_rates" in m:
                jumps = CompoundPoissonModel(self.marks, m["jump_rates"], T, m.get("max_jumps"))
            return JointModel(spec, jumps, m.get("y0", 0.0))
        # discrete
        K = m["num_slots"]
        single = m.get("single_jump", False)
        if "probs" in m:
            return DiscreteModel(self.marks, K, np.asarray(m["probs"], dtype=float), T, single_jump=single)
        n_marks = len(self.marks) if self.marks is not None else 2
        values = None if self.marks is None else self.marks.value_array
        return DiscreteModel.random(m.get("random_seed", 0), K, n_marks, single_jump=single,
                                    history_dependent=m.get("history_dependent", True), horizon=T,
                                    mark_values=values)


def _read_json(source, what):
    path = Path(source)
    if not path.exists():
        bundled = resources.files("jumprep") / "scenarios" / f"{source}.json"
        if bundled.is_file():
            return json.loads(bundled.read_text())
        raise ConfigError(f"{what} file not found: {source}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {source}: invalid JSON ({exc})") from None


def load_scenario(source):
    return Scenario.load(source)


def bundled_scenarios():
    root = resources.files("jumprep") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and not p.name.endswith(".payoff.json"))


# -- payoffs ----------------------------------------------------------------


def _mark_sum(obj):
    from ..multi_jump import MarkSumPayoff

    return MarkSumPayoff(_FUNCTIONS[obj["function"]], obj.get("weights"), obj.get("drift", 0.0),
                         obj.get("x0", 0.0), name=obj["function"])


def _terminal(obj):
    from ..jump_diffusion import TerminalPayoff

    f = obj["function"]
    if f == "identity":
        return TerminalPayoff.identity()
    if f == "digital":
        return TerminalPayoff.digital(obj.get("strike", 0.0))
    return TerminalPayoff.square_minus(obj.get("constant", 0.0))


def load_payoff(source, scenario):
    """Payoff object matching the scenario kind.

    ``single_jump``: :class:`PayoffFunctional`; ``multi_jump`` and
    ``truncation_family``: :class:`MarkSumPayoff`; ``joint_diffusion``:
    :class:`JointPayoff`; ``discrete``: callable on outcome tuples.
    """
    from ..jump_diffusion import JointPayoff
    from ..single_jump import PayoffFunctional

    obj = source if isinstance(source, dict) else _read_json(source, "payoff")
    _validate(obj, PAYOFF_SCHEMA, "payoff")
    kind, typ = scenario.kind, obj["type"]
    allowed = {
        "single_jump": ("indicator_before", "constant", "table"),
        "multi_jump": ("mark_sum",),
        "truncation_family": ("mark_sum",),
        "discrete": ("mark_sum", "constant"),
        "joint_diffusion": ("product_sum", "terminal", "mark_sum"),
        "cox": (),
    }[kind]
    if typ not in allowed:
        raise ConfigError(f"payoff type {typ!r} does not apply to {kind} scenarios")
    if kind == "single_jump":
        law = scenario.build()
        n = law.n_marks
        if typ == "constant":
            return PayoffFunctional.constant(obj["value"], n)
        if typ == "indicator_before":
            marks = obj.get("marks")
            idx = None if marks is None else [law.marks.index(mk) for mk in marks]
            return PayoffFunctional.indicator_before(obj["time"], n, idx)
        values = np.asarray(obj["values"], dtype=float)
        if values.shape != (len(obj["times"]), n):
            raise ConfigError(f"payoff table must have shape ({len(obj['times'])}, {n})")
        return PayoffFunctional.from_table(obj["times"], values, obj.get("value_at_infinity", 0.0))
    if kind == "discrete":
        if typ == "constant":
            c = float(obj["value"])
            return lambda outcomes: c
        model = scenario.build()
        ms = _mark_sum(obj)
        w = model.marks.value_array if ms.weights is None else ms.weights
        if len(w) != model.n_marks:
            raise ConfigError("payoff weights do not match the mark space")
        if isinstance(ms.drift, str):
            raise ConfigError("compensated drift is not defined for discrete scenarios")
        drift = float(ms.drift) * model.horizon

        def outcome_payoff(outcomes):
            x = ms.x0 + sum(w[o] for o in outcomes if o != NO_MARK) - drift
            return float(ms.func(x))

        return outcome_payoff
    if kind in ("multi_jump", "truncation_family"):
        return _mark_sum(obj)
    if typ == "product_sum":
        return JointPayoff([(t.get("coef", 1.0),
                             _terminal(t["continuous"]) if t.get("continuous") else None,
                             _mark_sum(t["jump"]) if t.get("jump") else None) for t in obj["terms"]])
    if typ == "terminal":
        return JointPayoff.product(_terminal(obj))
    return JointPayoff.product(None, _mark_sum(obj))


def default_payoff(scenario):
    """Payoff used when none is given."""
    defaults = {
        "single_jump": {"type": "indicator_before", "time": scenario.horizon},
        "multi_jump": {"type": "mark_sum", "function": "identity"},
        "truncation_family": {"type": "mark_sum", "function": "identity", "drift": "compensated"},
        "discrete": {"type": "mark_sum", "function": "identity"},
        "joint_diffusion": {"type": "product_sum", "terms": [{
            "coef": 1.0, "continuous": {"type": "terminal", "function": "digital", "strike": 0.0},
            "jump": {"type": "mark_sum", "function": "indicator_zero"}}]},
    }
    if scenario.kind == "joint_diffusion" and scenario.build().jumps is None:
        return load_payoff({"type": "terminal", "function": "digital"}, scenario)
    if scenario.kind not in defaults:
        return None
    return load_payoff(defaults[scenario.kind], scenario)
