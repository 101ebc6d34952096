"""Context-dependent interpretation: escalation indices, cue fusion, and
cooldown-gated adaptation proposals with human-in-the-loop decisions.

The fusion rule is a reliability-weighted mean of per-modality escalation
contributions in [0, 1]; contradictory reliable cues raise an uncertainty
flag and suppress automatic proposals (they surface for review instead).
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from importlib import resources

log = logging.getLogger(__name__)

DEFAULT_COOLDOWN_S = 5.0
PROPOSAL_EXPIRY_S = 30.0
UNCERTAINTY_DISAGREEMENT = 0.5
UNCERTAINTY_RELIABILITY_FLOOR = 0.5


class InterpretError(ValueError):
    pass


@dataclass(frozen=True)
class IndexKey:
    gesture_id: str
    scenario_id: str
    officer_gender: str
    citizen_demographics: str


class EscalationIndexTable:
    """(gesture x scenario x demographics) -> escalation index in [-1, 1].

    Missing keys resolve to 0 (neutral) and are counted/logged as misses.
    """

    def __init__(self, entries: dict[IndexKey, float] | None = None):
        self._entries: dict[IndexKey, float] = {}
        self.miss_count = 0
        for key, value in (entries or {}).items():
            self.put(key, value)

    def put(self, key: IndexKey, value: float):
        if not -1.0 <= value <= 1.0:
            raise InterpretError(f"index {value} outside [-1, 1] for {key}")
        self._entries[key] = float(value)

    def lookup(self, gesture_id: str, scenario_id: str, officer_gender: str,
               citizen_demographics: str) -> float:
        key = IndexKey(gesture_id, scenario_id, officer_gender,
                       citizen_demographics)
        if key in self._entries:
            return self._entries[key]
        self.miss_count += 1
        log.info("escalation index miss for %s; returning neutral 0.0", key)
        return 0.0

    def __len__(self):
        return len(self._entries)

    @classmethod
    def from_csv(cls, path_or_file) -> "EscalationIndexTable":
        table = cls()
        close = False
        if hasattr(path_or_file, "read"):
            fh = path_or_file
        else:
            fh = open(path_or_file, encoding="utf-8", newline="")
            close = True
        try:
            reader = csv.DictReader(fh)
            required = {"gesture_id", "scenario_id", "officer_gender",
                        "citizen_demographics", "index"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise InterpretError(
                    f"index CSV must have columns {sorted(required)}")
            for row in reader:
                table.put(IndexKey(row["gesture_id"], row["scenario_id"],
                                   row["officer_gender"],
                                   row["citizen_demographics"]),
                          float(row["index"]))
        finally:
            if close:
                fh.close()
        return table

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gesture_id", "scenario_id", "officer_gender",
                             "citizen_demographics", "index"])
            for key in sorted(self._entries, key=lambda k: (
                    k.gesture_id, k.scenario_id, k.officer_gender,
                    k.citizen_demographics)):
                writer.writerow([key.gesture_id, key.scenario_id,
                                 key.officer_gender, key.citizen_demographics,
                                 self._entries[key]])

    @classmethod
    def load_default(cls) -> "EscalationIndexTable":
        with resources.files("multicue.data").joinpath(
                "escalation_indices.csv").open("r", encoding="utf-8") as fh:
            return cls.from_csv(fh)


SCENARIO_IDS = tuple(f"s{i:02d}" for i in range(1, 11))
OFFICER_GENDERS = ("female", "male")
CITIZEN_DEMOGRAPHICS = ("adult_native", "adult_nonnative", "youth")

# Demo index levels per communicative function; deployments replace the
# CSV with empirically collected values.
_FUNCTION_BASE_INDEX = {
    "routine_alert": 0.1,
    "calming": -0.5,
    "commanding": 0.3,
    "space_controlling": 0.4,
    "reactive": 0.6,
}
_DEMOGRAPHIC_SHIFT = {"adult_native": 0.0, "adult_nonnative": 0.1, "youth": 0.05}
_GENDER_SHIFT = {"female": 0.0, "male": 0.0}


def build_default_table(taxonomy_classes: dict[str, str]) -> EscalationIndexTable:
    """Deterministic demo table covering every gesture/scenario/demographic."""
    table = EscalationIndexTable()
    for gesture_id, function_class in sorted(taxonomy_classes.items()):
        base = _FUNCTION_BASE_INDEX[function_class]
        for scenario, gender, demo in itertools.product(
                SCENARIO_IDS, OFFICER_GENDERS, CITIZEN_DEMOGRAPHICS):
            value = base
            if base > 0:
                value += _DEMOGRAPHIC_SHIFT[demo] + _GENDER_SHIFT[gender]
            table.put(IndexKey(gesture_id, scenario, gender, demo),
                      max(-1.0, min(1.0, value)))
    return table


@dataclass
class ContextState:
    scenario_id: str
    officer_gender: str = "female"
    citizen_demographics: str = "adult_native"
    flags: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenario_id:
            raise InterpretError("scenario_id must be present")


def lookup_index(table: EscalationIndexTable, gesture_id: str,
                 context: ContextState) -> float:
    return table.lookup(gesture_id, context.scenario_id,
                        context.officer_gender, context.citizen_demographics)


@dataclass
class CueInput:
    """One modality's escalation contribution c in [0, 1] with reliability."""

    value: float
    reliability: float = 1.0
    detail: str = ""

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise InterpretError(f"cue value {self.value} outside [0, 1]")
        if not 0.0 <= self.reliability <= 1.0:
            raise InterpretError(f"reliability {self.reliability} outside [0, 1]")


@dataclass
class FusedSnapshot:
    t: float
    cues: dict[str, CueInput]
    weights: dict[str, float]
    risk_score: float
    uncertain: bool
    disagreement: tuple[str, str] | None = None


def fuse(t: float, cues: dict[str, CueInput], weights: dict[str, float] | None = None
         ) -> FusedSnapshot:
    """risk = sum(w_m r_m c_m) / sum(w_m r_m) over the contributing cues.

    Uncertainty flags when two cues that are both reliable (>= 0.5)
    disagree by more than 0.5.
    """
    if not cues:
        raise InterpretError("no cues to fuse")
    weights = weights or {}
    for name, w in weights.items():
        if not 0.0 <= w <= 1.0:
            raise InterpretError(f"weight {w} for {name} outside [0, 1]")
    num = den = 0.0
    for name, cue in cues.items():
        w = weights.get(name, 1.0)
        num += w * cue.reliability * cue.value
        den += w * cue.reliability
    if den == 0.0:
        raise InterpretError("all cue reliabilities (or weights) are zero")
    risk = num / den
    uncertain = False
    disagreement = None
    reliable = [(n, c) for n, c in cues.items()
                if c.reliability >= UNCERTAINTY_RELIABILITY_FLOOR
                and weights.get(n, 1.0) > 0.0]
    for (na, ca), (nb, cb) in itertools.combinations(reliable, 2):
        if abs(ca.value - cb.value) > UNCERTAINTY_DISAGREEMENT:
            uncertain = True
            disagreement = (na, nb)
            break
    return FusedSnapshot(t=t, cues=dict(cues), weights=dict(weights),
                         risk_score=risk, uncertain=uncertain,
                         disagreement=disagreement)


@dataclass(frozen=True)
class CooldownPolicy:
    duration_s: float = DEFAULT_COOLDOWN_S

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InterpretError("cooldown duration must be positive")


@dataclass
class AdaptationAction:
    action: str
    intensity: float

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise InterpretError("action intensity must lie in [0, 1]")


@dataclass
class Rule:
    name: str
    min_risk: float
    actions: list[AdaptationAction]

    @classmethod
    def from_dict(cls, doc: dict) -> "Rule":
        return cls(
            name=doc["name"],
            min_risk=float(doc["min_risk"]),
            actions=[AdaptationAction(a["action"], float(a.get("intensity", 0.5)))
                     for a in doc["actions"]],
        )


def load_rules(path=None) -> list[Rule]:
    """Declarative proposal rules (JSON list). Defaults to the bundled set."""
    if path is None:
        text = resources.files("multicue.data").joinpath(
            "adaptation_rules.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rules = [Rule.from_dict(doc) for doc in json.loads(text)]
    if not rules:
        raise InterpretError("rule set is empty")
    return sorted(rules, key=lambda r: r.min_risk, reverse=True)


@dataclass
class AdaptationProposal:
    id: str
    t: float
    actions: list[AdaptationAction]
    rationale: list[str]
    status: str = "pending"  # pending|approved|rejected|expired|auto_applied
    rule_name: str = ""
    decided_by: str | None = None

    def __post_init__(self):
        if not self.actions:
            raise InterpretError("proposal must carry at least one action")
        if not self.rationale:
            raise InterpretError("proposal must cite at least one cue")


@dataclass
class ReviewItem:
    """Uncertain snapshot surfaced for the trainer instead of a proposal."""

    t: float
    risk_score: float
    disagreement: tuple[str, str] | None
    cues: dict[str, CueInput]


class InterpretEngine:
    """Single-consumer interpretation loop for one session.

    Feed fused snapshots in timestamp order via `consume`; decisions arrive
    through `record_decision`. Every state change lands in `records` (and
    the optional sink callback) as session-log entries.
    """

    def __init__(self, rules: list[Rule] | None = None,
                 policy: CooldownPolicy | None = None,
                 mode: str = "supervised",
                 sink=None):
        self.rules = rules or load_rules()
        self.policy = policy or CooldownPolicy()
        self.mode = self._check_mode(mode)
        self.sink = sink
        self.proposals: dict[str, AdaptationProposal] = {}
        self.reviews: list[ReviewItem] = []
        self.records: list[dict] = []
        self.actions_emitted: list[dict] = []
        self._last_proposal_t: float | None = None
        self._counter = 0

    @staticmethod
    def _check_mode(mode: str) -> str:
        if mode not in ("supervised", "auto"):
            raise InterpretError("mode must be 'supervised' or 'auto'")
        return mode

    def _record(self, t: float, kind: str, stream: str, data: dict):
        rec = {"t": t, "kind": kind, "stream": stream, "data": data}
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)

    def set_mode(self, mode: str, t: float = 0.0) -> str:
        self.mode = self._check_mode(mode)
        self._record(t, "context", "interpret", {"mode": mode})
        return self.mode

    def _match_rule(self, risk: float) -> Rule | None:
        for rule in self.rules:  # sorted by min_risk descending
            if risk >= rule.min_risk:
                return rule
        return None

    def consume(self, snapshot: FusedSnapshot) -> AdaptationProposal | ReviewItem | None:
        """Apply the proposal gate to one fused snapshot.

        A proposal fires iff a rule threshold is crossed, the cooldown
        window has passed, and the snapshot is not uncertain. Uncertain
        crossings become review items (conservative: never auto-adapt on
        contradictory cues).
        """
        self.expire_pending(snapshot.t)
        rule = self._match_rule(snapshot.risk_score)
        if rule is None:
            return None
        if snapshot.uncertain:
            item = ReviewItem(t=snapshot.t, risk_score=snapshot.risk_score,
                              disagreement=snapshot.disagreement,
                              cues=snapshot.cues)
            self.reviews.append(item)
            self._record(snapshot.t, "context", "interpret", {
                "review": {"risk_score": snapshot.risk_score,
                           "disagreement": list(snapshot.disagreement or [])},
            })
            return item
        if self._last_proposal_t is not None and \
                snapshot.t - self._last_proposal_t < self.policy.duration_s:
            return None
        self._counter += 1
        proposal = AdaptationProposal(
            id=f"p{self._counter:04d}",
            t=snapshot.t,
            actions=list(rule.actions),
            rationale=[f"{name}={cue.value:.2f}" + (f" ({cue.detail})" if cue.detail else "")
                       for name, cue in sorted(snapshot.cues.items())],
            rule_name=rule.name,
        )
        self.proposals[proposal.id] = proposal
        self._last_proposal_t = snapshot.t
        self._record(snapshot.t, "proposal", "interpret", _proposal_dict(proposal))
        if self.mode == "auto":
            proposal.status = "auto_applied"
            self._emit_actions(proposal, snapshot.t)
            self._record(snapshot.t, "decision", "interpret", {
                "proposal_id": proposal.id, "decision": "auto_applied",
                "actor": "system",
            })
        return proposal

    def record_decision(self, proposal_id: str, decision: str, actor: str,
                        t: float, override_actions: list[AdaptationAction] | None = None
                        ) -> AdaptationProposal:
        """approve | reject | override a pending proposal (exactly once)."""
        proposal = self.proposals.get(proposal_id)
        if proposal is None:
            raise InterpretError(f"unknown proposal {proposal_id!r}")
        if proposal.status != "pending":
            raise InterpretError(
                f"proposal {proposal_id} already {proposal.status}")
        if decision == "approve":
            proposal.status = "approved"
            self._emit_actions(proposal, t)
        elif decision == "reject":
            proposal.status = "rejected"
        elif decision == "override":
            if not override_actions:
                raise InterpretError("override requires replacement actions")
            proposal.actions = list(override_actions)
            proposal.status = "approved"
            self._emit_actions(proposal, t)
        else:
            raise InterpretError(f"unknown decision {decision!r}")
        proposal.decided_by = actor
        self._record(t, "decision", "interpret", {
            "proposal_id": proposal_id, "decision": decision, "actor": actor,
            "actions": [{"action": a.action, "intensity": a.intensity}
                        for a in proposal.actions],
        })
        return proposal

    def expire_pending(self, now: float):
        for proposal in self.proposals.values():
            if proposal.status == "pending" and \
                    now - proposal.t > PROPOSAL_EXPIRY_S:
                proposal.status = "expired"
                self._record(now, "decision", "interpret", {
                    "proposal_id": proposal.id, "decision": "expired",
                    "actor": "system",
                })

    def _emit_actions(self, proposal: AdaptationProposal, t: float):
        for action in proposal.actions:
            entry = {"t": t, "proposal_id": proposal.id,
                     "action": action.action, "intensity": action.intensity}
            self.actions_emitted.append(entry)
            self._record(t, "context", "xr_actions", entry)


def _proposal_dict(p: AdaptationProposal) -> dict:
    return {
        "id": p.id, "t": p.t, "status": p.status, "rule": p.rule_name,
        "actions": [{"action": a.action, "intensity": a.intensity}
                    for a in p.actions],
        "rationale": p.rationale,
    }


# --- cue encodings -----------------------------------------------------------

def load_cue_encodings(path=None) -> dict:
    """Editable per-stream mapping of feature outputs to [0, 1] cue values."""
    if path is None:
        text = resources.files("multicue.data").joinpath(
            "cue_encodings.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def encode_formality(label: str, encodings: dict) -> CueInput:
    value = encodings["verbal_formality"].get(label, 0.3)
    return CueInput(value=value, detail=f"formality:{label}")


def encode_insult(hit_count: int, encodings: dict) -> CueInput:
    if hit_count <= 0:
        return CueInput(value=encodings["verbal_formality"]["neutral"],
                        detail="no insults")
    return CueInput(value=encodings["verbal_insult"], detail=f"insults:{hit_count}")


def encode_loudness(loudness_high: bool, encodings: dict) -> CueInput:
    key = "high" if loudness_high else "normal"
    return CueInput(value=encodings["loudness"][key], detail=f"loudness:{key}")


def encode_arousal(flag: str, encodings: dict) -> CueInput:
    return CueInput(value=encodings["arousal"][flag], detail=f"arousal:{flag}")


def encode_gesture(index: float) -> CueInput:
    """Escalation index in [-1, 1] rescaled to a [0, 1] contribution."""
    return CueInput(value=(index + 1.0) / 2.0, detail=f"gesture index {index:+.2f}")
