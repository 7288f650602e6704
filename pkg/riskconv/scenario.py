"""
Scenario files: a UTF-8 JSON document naming a probability space, positions,
measures, the roster with its weights and, optionally, allocations.

    {
      "space": {"probabilities": [0.25, 0.25, 0.25, 0.25]},    or {"equiprobable": 4}
      "positions": {"x": [-1, 0, 1, 2]},
      "measures": {"es": {"kind": "ES", "alpha": 0.5}},
      "roster": ["es", {"kind": "ES", "alpha": 0.1}],              entries may carry {"index": i, "measure": ...}
      "default": "es",
      "weights": {"entries": [[1, 0.5], [2, 0.5]], "tail": null},   or a plain list of weights
      "allocations": {"a": {"1": [...], "2": [...]}}
    }
"""

import json
import logging
from .shared import NameResolutionError, RiskConvError, ScenarioError, StructuralError
from .space import FiniteProbabilitySpace
from .measures import parse_descriptor, to_descriptor
from .weights import WeightScheme
from .convolution import Allocation, MeasureRoster


logger = logging.getLogger(__name__)


class Scenario:
    def __init__(self, space, positions, measures, roster, weights, allocations=None):
        self.space = space
        self.positions = dict(positions)
        self.measures = dict(measures)
        self.roster = roster
        self.weights = weights
        self.allocations = dict(allocations or {})

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as x:
            raise ScenarioError(str(x), str(path))
        return cls.loads(text)

    @classmethod
    def loads(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as x:
            raise ScenarioError("line {:d} column {:d}: {:s}".format(x.lineno, x.colno, x.msg), "scenario")
        return cls.from_json(data)

    @classmethod
    def from_json(cls, data):
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object", "scenario")
        space = _parse_space(data.get("space"))
        positions = {}
        for name, values in _section(data, "positions").items():
            positions[name] = _parse_values(space, values, "positions." + name)
        measures = {name: parse_descriptor(d, "measures." + name) for name, d in _section(data, "measures", False).items()}
        entries = data.get("roster", [])
        if not isinstance(entries, list):
            raise ScenarioError("roster must be a list", "roster")
        default = data.get("default")
        if default is not None:
            default = _roster_entry(measures, default, "default")
        if not entries and default is None:
            raise ScenarioError("roster needs at least one measure or a default", "roster")
        weights = data.get("weights")
        if weights is None:
            raise ScenarioError("missing weights", "weights")
        if isinstance(weights, list):
            try:
                weights = WeightScheme.from_weights([float(w) for w in weights])
            except (TypeError, ValueError) as x:
                raise ScenarioError(str(x), "weights")
        else:
            weights = WeightScheme.from_json(weights)
        roster = _parse_roster(measures, entries, weights, default)
        allocations = {}
        for name, components in _section(data, "allocations", False).items():
            allocations[name] = _parse_allocation(space, weights, components, "allocations." + name)
        return cls(space, positions, measures, roster, weights, allocations)

    def to_json(self):
        result = {
            "space": {"probabilities": self.space.probabilities.tolist()},
            "positions": {name: x.tolist() for name, x in self.positions.items()},
            "measures": {name: to_descriptor(spec) for name, spec in self.measures.items()},
            "roster": [dict(to_descriptor(self.roster.measures[i]), index=i) for i in sorted(self.roster.measures)],
            "weights": self.weights.to_json(),
        }
        if self.roster.default is not None:
            result["default"] = to_descriptor(self.roster.default)
        if self.allocations:
            result["allocations"] = {name: a.to_json() for name, a in self.allocations.items()}
        return result

    def position(self, name):
        if name not in self.positions:
            raise NameResolutionError("unknown position {!r}; known: {:s}".format(name, ", ".join(sorted(self.positions)) or "none"))
        return self.positions[name]

    def measure(self, name):
        if name in self.measures:
            return self.measures[name]
        for spec in list(self.roster.measures.values()) + [self.roster.default]:
            if spec is not None and spec.name == name:
                return spec
        raise NameResolutionError("unknown measure {!r}; known: {:s}".format(name, ", ".join(sorted(self.measures)) or "none"))

    def allocation(self, name):
        if name not in self.allocations:
            raise NameResolutionError("unknown allocation {!r}".format(name))
        return self.allocations[name]


def _section(data, key, required=True):
    section = data.get(key)
    if section is None:
        if required:
            raise ScenarioError("missing section", key)
        return {}
    if not isinstance(section, dict):
        raise ScenarioError("must be an object mapping names to entries", key)
    return section


def _parse_space(data):
    if isinstance(data, list):
        data = {"probabilities": data}
    if not isinstance(data, dict):
        raise ScenarioError("space must be an object", "space")
    try:
        if "equiprobable" in data:
            return FiniteProbabilitySpace.equiprobable(int(data["equiprobable"]))
        return FiniteProbabilitySpace(data["probabilities"])
    except KeyError:
        raise ScenarioError("needs 'probabilities' or 'equiprobable'", "space")
    except (RiskConvError, TypeError, ValueError) as x:
        raise ScenarioError(str(x), "space")


def _parse_values(space, values, where):
    try:
        x = space.position(values)
    except (RiskConvError, TypeError, ValueError) as error:
        raise ScenarioError(str(error), where)
    return x


def _parse_roster(measures, entries, weights, default):
    """
    Roster entries are measure names, descriptors, or {"index": i, "measure": name or descriptor}.
    A descriptor may also carry its own "index". Entries without one take the explicit weight
    indices in order, then continue after the last index used.
    """
    explicit = [i for i, _ in weights.entries]
    roster = {}
    last = 0
    for k, entry in enumerate(entries):
        where = "roster[{:d}]".format(k)
        index = None
        if isinstance(entry, dict) and "index" in entry:
            entry = dict(entry)
            try:
                index = int(entry.pop("index"))
            except (TypeError, ValueError):
                raise ScenarioError("index must be an integer", where)
            if "measure" in entry:
                entry = entry["measure"]
        spec = _roster_entry(measures, entry, where)
        if index is None:
            index = explicit[k] if k < len(explicit) else last + 1
        if index in roster:
            raise ScenarioError("index {:d} is given twice".format(index), where)
        roster[index] = spec
        last = max(last, index)
    roster = MeasureRoster(roster, default)
    try:
        roster.aligned(weights)
    except StructuralError as x:
        raise ScenarioError(str(x), "roster")
    return roster


def _roster_entry(measures, entry, where):
    if isinstance(entry, str):
        if entry not in measures:
            raise ScenarioError("unknown measure name {!r}".format(entry), where)
        return measures[entry].named(entry)
    return parse_descriptor(entry, where)


def _parse_allocation(space, weights, components, where):
    if not isinstance(components, dict):
        raise ScenarioError("allocation must map indices to value arrays", where)
    parsed = {}
    for i, values in components.items():
        try:
            index = int(i)
        except ValueError:
            raise ScenarioError("allocation index {!r} is not an integer".format(i), where)
        parsed[index] = _parse_values(space, values, "{:s}.{}".format(where, i))
    try:
        return Allocation(parsed, weights)
    except RiskConvError as x:
        raise ScenarioError(str(x), where)


def load_allocation(path, scenario):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as x:
        raise ScenarioError(str(x), str(path))
    except json.JSONDecodeError as x:
        raise ScenarioError("line {:d} column {:d}: {:s}".format(x.lineno, x.colno, x.msg), str(path))
    return _parse_allocation(scenario.space, scenario.weights, data, str(path))
