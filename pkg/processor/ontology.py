"""Phase and step class definitions.

The default ontology lists the 11 phases and 44 steps of laparoscopic
Roux-en-Y gastric bypass. Which steps belong to which phase is left empty
here; a hierarchy is supplied by whoever builds a dataset (for example the
synthetic generator).
"""

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Tuple

from src.file_utils import write_json
from src.logger import get_logger
from .errors import FormatError, InvalidArgumentError

logger = get_logger(__name__)

PHASE_NAMES = (
    "preparation",
    "gastric pouch creation",
    "omentum division",
    "gastrojejunal anastomosis",
    "anastomosis test",
    "jejunal separation",
    "closure petersen space",
    "jejunojejunal anastomosis",
    "closure mesenteric defect",
    "cleaning coagulation",
    "disassembling",
)
CRITICAL_PHASES = frozenset({"P2", "P4", "P5", "P8"})

STEP_NAMES = (
    "null step",
    "cavity exploration",
    "trocar placement",
    "retractor placement",
    "crura dissection",
    "his angle dissection",
    "horizontal stapling",
    "retrogastric dissection",
    "vertical stapling",
    "gastric remnant reinforcement",
    "gastric pouch reinforcement",
    "gastric opening",
    "omental lifting",
    "omental section",
    "adhesiolysis",
    "treitz angle identification",
    "biliary limb measurement",
    "jejunum opening",
    "gastrojejunal stapling",
    "gastrojejunal defect closing",
    "mesenteric opening",
    "jejunal section",
    "gastric tube placement",
    "clamping",
    "ink injection",
    "visual assessment",
    "gastrojejunal anastomosis reinforcement",
    "petersen space exposure",
    "petersen space closing",
    "biliary limb opening",
    "alimentary limb measurement",
    "alimentary limb opening",
    "jejunojejunal stapling",
    "jejunojejunal defect closing",
    "jejunojejunal anastomosis reinforcement",
    "staple line reinforcement",
    "mesenteric defect exposure",
    "mesenteric defect closing",
    "anastomosis fixation",
    "coagulation",
    "irrigation aspiration",
    "parietal closure",
    "trocar removal",
    "calibration",
)
CRITICAL_STEPS = frozenset({"S4", "S5", "S6", "S7", "S8", "S16", "S18", "S25", "S30", "S32", "S39"})


@dataclass(frozen=True)
class ActivityClass:
    id: int
    name: str
    code: str
    critical: bool = False


@dataclass(frozen=True)
class Ontology:
    """Ordered phase and step classes with an optional phase -> steps map."""

    phases: Tuple[ActivityClass, ...]
    steps: Tuple[ActivityClass, ...]
    hierarchy: Dict[int, FrozenSet[int]] = field(default_factory=dict)

    def __post_init__(self):
        for kind, classes in (("phase", self.phases), ("step", self.steps)):
            if not classes:
                raise InvalidArgumentError(f"ontology needs at least one {kind}")
            ids = [c.id for c in classes]
            if ids != list(range(len(classes))):
                raise InvalidArgumentError(f"{kind} ids must be dense from 0, got {ids}")
        hierarchy = {int(p): frozenset(int(s) for s in steps) for p, steps in self.hierarchy.items()}
        if hierarchy:
            for phase, steps in hierarchy.items():
                if not 0 <= phase < len(self.phases):
                    raise InvalidArgumentError(f"hierarchy names unknown phase {phase}")
                if any(not 0 <= s < len(self.steps) for s in steps):
                    raise InvalidArgumentError(f"hierarchy of phase {phase} names unknown steps")
            covered = frozenset().union(*hierarchy.values())
            missing = sorted(set(range(len(self.steps))) - covered)
            if missing:
                raise InvalidArgumentError(f"hierarchy leaves steps without a phase: {missing}")
        object.__setattr__(self, "hierarchy", hierarchy)

    @property
    def num_phases(self) -> int:
        return len(self.phases)

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def phase_names(self):
        return [c.name for c in self.phases]

    @property
    def step_names(self):
        return [c.name for c in self.steps]

    def classes(self, task: str):
        """Classes of ``task`` (``"phase"`` or ``"step"``)."""
        if task == "phase":
            return self.phases
        if task == "step":
            return self.steps
        raise InvalidArgumentError(f"unknown task '{task}'")

    def steps_of(self, phase: int) -> FrozenSet[int]:
        return self.hierarchy.get(phase, frozenset())

    def is_consistent(self, phase: int, step: int) -> bool:
        """``True`` when no hierarchy is set or ``step`` belongs to ``phase``."""
        return not self.hierarchy or step in self.steps_of(phase)

    def with_hierarchy(self, hierarchy) -> "Ontology":
        return Ontology(self.phases, self.steps, hierarchy)

    def to_dict(self):
        def encode(classes):
            return [{"id": c.id, "name": c.name, "code": c.code, "critical": c.critical} for c in classes]

        return {
            "phases": encode(self.phases),
            "steps": encode(self.steps),
            "hierarchy": {str(p): sorted(s) for p, s in sorted(self.hierarchy.items())},
        }

    @classmethod
    def from_dict(cls, data) -> "Ontology":
        def decode(entries):
            return tuple(
                ActivityClass(int(e["id"]), str(e["name"]), str(e.get("code", e["id"])), bool(e.get("critical", False)))
                for e in entries
            )

        try:
            return cls(
                decode(data["phases"]),
                decode(data["steps"]),
                {int(p): frozenset(s) for p, s in data.get("hierarchy", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise FormatError(f"malformed ontology record: {exc}") from exc


def default_ontology() -> Ontology:
    """11 phases (P1-P11) and 44 steps (S0-S43) with critical flags, no hierarchy."""
    phases = tuple(
        ActivityClass(i, name, f"P{i + 1}", f"P{i + 1}" in CRITICAL_PHASES) for i, name in enumerate(PHASE_NAMES)
    )
    steps = tuple(
        ActivityClass(i, name, f"S{i}", f"S{i}" in CRITICAL_STEPS) for i, name in enumerate(STEP_NAMES)
    )
    return Ontology(phases, steps)


def write_ontology(ontology: Ontology, path):
    write_json(path, ontology.to_dict())
    logger.debug("Ontology written to %s", path)
    return path


def read_ontology(path) -> Ontology:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"ontology file {path} is not valid JSON: {exc.msg}", exc.pos) from exc
    return Ontology.from_dict(data)
