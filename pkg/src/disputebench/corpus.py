"""Transcript data model, IRP taxonomy and line-delimited corpus reader/writer."""

import json
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from disputebench.negotiation import (
    MAX_ROUNDS,
    Accept,
    Action,
    ActionKind,
    ImportanceWeights,
    IssueAllocation,
    Message,
    NegotiationError,
    Outcome,
    OutcomeKind,
    Reject,
    Role,
    Submit,
    WalkAway,
    strip_action_tokens,
)


class CorpusError(Exception):
    """Base class for corpus failures."""


class UnknownStrategyError(CorpusError, ValueError):
    pass


class CorpusValidationError(CorpusError, ValueError):
    """One or more records violate the dialogue schema or its invariants."""

    def __init__(self, issues: list[str]):
        self.issues = issues
        super().__init__("; ".join(issues))


class IrpStrategy(str, Enum):
    PROPOSAL = "Proposal"
    CONCESSION = "Concession"
    INTERESTS = "Interests"
    POSITIVE_EXPECTATIONS = "PositiveExpectations"
    FACTS = "Facts"
    PROCEDURAL = "Procedural"
    POWER = "Power"
    RIGHTS = "Rights"
    RESIDUAL = "Residual"

    @classmethod
    def parse(cls, label: str) -> "IrpStrategy":
        """Canonical names exactly, or case-insensitively, or as the 5-letter axis abbreviations."""
        try:
            return cls(label)
        except ValueError:
            pass
        key = "".join(str(label).split()).replace("_", "").replace("-", "").lower()
        for strategy in cls:
            name = strategy.value.lower()
            if key == name or key == name[:5]:
                return strategy
        raise UnknownStrategyError(f"unknown strategy label {label!r}")

    @property
    def abbreviation(self) -> str:
        return self.value[:5]


STRATEGIES: tuple[IrpStrategy, ...] = tuple(IrpStrategy)


class IrpCategory(str, Enum):
    COOPERATIVE = "Cooperative"
    NEUTRAL = "Neutral"
    COMPETITIVE = "Competitive"
    RESIDUAL = "Residual"


CATEGORY_MEMBERS: dict[IrpCategory, frozenset[IrpStrategy]] = {
    IrpCategory.COOPERATIVE: frozenset(
        {
            IrpStrategy.PROPOSAL,
            IrpStrategy.CONCESSION,
            IrpStrategy.INTERESTS,
            IrpStrategy.POSITIVE_EXPECTATIONS,
        }
    ),
    IrpCategory.NEUTRAL: frozenset({IrpStrategy.FACTS, IrpStrategy.PROCEDURAL}),
    IrpCategory.COMPETITIVE: frozenset({IrpStrategy.POWER, IrpStrategy.RIGHTS}),
    IrpCategory.RESIDUAL: frozenset({IrpStrategy.RESIDUAL}),
}

_CATEGORY_OF = {s: c for c, members in CATEGORY_MEMBERS.items() for s in members}


def category_of(strategy: IrpStrategy) -> IrpCategory:
    return _CATEGORY_OF[IrpStrategy(strategy)]


class Trait(str, Enum):
    EXT = "EXT"
    AGR = "AGR"
    CON = "CON"
    NEU = "NEU"
    OPE = "OPE"


TRAITS: tuple[Trait, ...] = tuple(Trait)


class TraitScale(str, Enum):
    SIX_POINT = "six_point"
    DECIMAL = "decimal"


@dataclass(frozen=True)
class TraitLevel:
    """Six-point polarity-degree level; the canonical integer is polarity * degree."""

    polarity: int
    degree: int

    def __post_init__(self) -> None:
        if self.polarity not in (-1, 1):
            raise ValueError(f"polarity must be +1 or -1, got {self.polarity}")
        if self.degree not in (1, 2, 3):
            raise ValueError(f"degree must be 1, 2 or 3, got {self.degree}")

    @property
    def value(self) -> int:
        return self.polarity * self.degree

    @classmethod
    def from_int(cls, value: int) -> "TraitLevel":
        if isinstance(value, bool) or int(value) != value or value == 0 or abs(value) > 3:
            raise ValueError(f"trait level must be one of -3..-1, +1..+3, got {value!r}")
        value = int(value)
        return cls(1 if value > 0 else -1, abs(value))

    def __str__(self) -> str:
        return f"{self.value:+d}"


LEVELS: tuple[int, ...] = (-3, -2, -1, 1, 2, 3)


def _is_six_point(value) -> bool:
    return not isinstance(value, bool) and isinstance(value, int) and value in LEVELS


@dataclass(frozen=True)
class PersonalityProfile:
    """Five BFI traits, either six-point levels (simulated) or 1-5 decimals (human corpora)."""

    values: dict[Trait, float]
    scale: TraitScale = TraitScale.SIX_POINT

    def __post_init__(self) -> None:
        values = {Trait(k): v for k, v in self.values.items()}
        if set(values) != set(TRAITS):
            missing = sorted(t.value for t in set(TRAITS) - set(values))
            raise ValueError(f"profile is missing traits {missing}")
        scale = TraitScale(self.scale)
        for trait, value in values.items():
            if scale is TraitScale.SIX_POINT and not _is_six_point(value):
                raise ValueError(f"{trait.value}={value!r} is not a six-point level")
            if scale is TraitScale.DECIMAL and not (
                isinstance(value, int | float) and math.isfinite(value) and 1.0 <= value <= 5.0
            ):
                raise ValueError(f"{trait.value}={value!r} is outside [1, 5]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scale", scale)

    def __getitem__(self, trait: Trait) -> float:
        return self.values[Trait(trait)]

    def level(self, trait: Trait) -> TraitLevel:
        if self.scale is not TraitScale.SIX_POINT:
            raise ValueError("decimal profiles carry no six-point levels")
        return TraitLevel.from_int(self.values[Trait(trait)])

    @classmethod
    def from_levels(cls, levels: dict[Trait, int]) -> "PersonalityProfile":
        return cls(dict(levels), TraitScale.SIX_POINT)

    def to_record(self) -> dict:
        record: dict = {trait.value: self.values[trait] for trait in TRAITS}
        record["scale"] = self.scale.value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "PersonalityProfile":
        record = dict(record)
        scale = record.pop("scale", None)
        if scale is None:
            scale = (
                TraitScale.SIX_POINT
                if all(_is_six_point(v) for v in record.values())
                else TraitScale.DECIMAL
            )
        unknown = set(record) - {t.value for t in TRAITS}
        if unknown:
            raise ValueError(f"unknown trait keys {sorted(unknown)}")
        return cls({Trait(k): v for k, v in record.items()}, TraitScale(scale))


@dataclass(frozen=True)
class Segment:
    text: str
    strategy: IrpStrategy | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("segment text must be non-empty")
        if self.strategy is not None and not isinstance(self.strategy, IrpStrategy):
            object.__setattr__(self, "strategy", IrpStrategy.parse(self.strategy))

    def to_record(self) -> dict:
        record: dict = {"text": self.text}
        if self.strategy is not None:
            record["strategy"] = self.strategy.value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Segment":
        strategy = record.get("strategy")
        return cls(
            text=record["text"], strategy=IrpStrategy.parse(strategy) if strategy else None
        )


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: Role
    text: str
    action: Action
    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("turn index must be nonnegative")
        object.__setattr__(self, "speaker", Role(self.speaker))
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def is_annotated(self) -> bool:
        return all(seg.strategy is not None for seg in self.segments)

    def to_record(self) -> dict:
        record: dict = {
            "index": self.index,
            "speaker": self.speaker.value,
            "text": self.text,
            "action": self.action.kind.value,
        }
        if isinstance(self.action, Submit):
            record["offer"] = self.action.offer.to_record()
        record["segments"] = [seg.to_record() for seg in self.segments]
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Turn":
        kind = ActionKind(record.get("action", ActionKind.MESSAGE.value))
        match kind:
            case ActionKind.SUBMIT:
                if "offer" not in record:
                    raise ValueError("submit turn without offer")
                action: Action = Submit(IssueAllocation.from_record(record["offer"]))
            case ActionKind.ACCEPT:
                action = Accept()
            case ActionKind.REJECT:
                action = Reject()
            case ActionKind.WALK_AWAY:
                action = WalkAway()
            case _:
                action = Message(record["text"])
        return cls(
            index=record["index"],
            speaker=Role(record["speaker"]),
            text=record["text"],
            action=action,
            segments=tuple(Segment.from_record(s) for s in record.get("segments", [])),
        )


class DialogueSource(str, Enum):
    HUMAN = "human-corpus"
    SIMULATED = "simulated"


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]
    outcome: Outcome
    source: DialogueSource = DialogueSource.SIMULATED
    profiles: dict[Role, PersonalityProfile] = field(default_factory=dict)
    importance: dict[Role, ImportanceWeights] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "source", DialogueSource(self.source))

    def turns_of(self, role: Role) -> list[Turn]:
        return [t for t in self.turns if t.speaker is role]

    @property
    def is_annotated(self) -> bool:
        return all(t.is_annotated for t in self.turns)

    def validate(self, max_rounds: int = MAX_ROUNDS) -> list[str]:
        """Return every invariant violation; an empty list means the dialogue is valid."""
        issues: list[str] = []
        if not self.id:
            issues.append("dialogue id is empty")
        if self.profiles and set(self.profiles) != set(Role):
            issues.append("profiles must be given for both Buyer and Seller")
        if self.importance and set(self.importance) != set(Role):
            issues.append("importance must be given for both Buyer and Seller")

        for i, turn in enumerate(self.turns):
            if turn.index != i:
                issues.append(f"turn index {turn.index} at position {i} (indices must be contiguous from 0)")
            if i > 0 and turn.speaker is self.turns[i - 1].speaker:
                issues.append(f"non-alternating turns at index {i}")
            if not turn.segments and strip_action_tokens(turn.text):
                issues.append(f"turn {i} has text but no segments")

        if len(self.turns) > 2 * max_rounds:
            issues.append(f"{len(self.turns)} turns exceed {max_rounds} rounds")

        issues.extend(self._outcome_issues())
        return issues

    def _outcome_issues(self) -> list[str]:
        last = self.turns[-1] if self.turns else None
        kind = self.outcome.kind
        if kind is OutcomeKind.AGREEMENT:
            if last is None or not isinstance(last.action, Accept):
                return ["Agreement outcome but the last turn is not an ACCEPT-DEAL"]
            if self.outcome.acceptor is not last.speaker:
                return ["Agreement acceptor differs from the speaker of the accepting turn"]
            offers = [t for t in self.turns[:-1] if isinstance(t.action, Submit)]
            if offers and offers[-1].action.offer != self.outcome.allocation:
                return ["Agreement allocation differs from the last submitted offer"]
        elif kind is OutcomeKind.WALK_AWAY:
            if last is None or not isinstance(last.action, WalkAway):
                return ["WalkAway outcome but the last turn is not a WALK-AWAY"]
            if self.outcome.walker is not last.speaker:
                return ["walker differs from the speaker of the walk-away turn"]
        elif last is not None and isinstance(last.action, Accept | WalkAway):
            return [f"NoAgreement outcome but the last turn is {last.action.kind.value}"]
        return []

    def to_record(self) -> dict:
        record: dict = {
            "id": self.id,
            "source": self.source.value,
            "profiles": {role.value: p.to_record() for role, p in self.profiles.items()},
            "importance": {role.value: w.to_record() for role, w in self.importance.items()},
            "turns": [turn.to_record() for turn in self.turns],
            "outcome": self.outcome.to_record(),
        }
        if self.metadata:
            record["metadata"] = self.metadata
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Dialogue":
        for key in ("id", "turns", "outcome"):
            if key not in record:
                raise ValueError(f"missing field {key!r}")
        return cls(
            id=str(record["id"]),
            source=DialogueSource(record.get("source", DialogueSource.SIMULATED.value)),
            profiles={
                Role(k): PersonalityProfile.from_record(v)
                for k, v in (record.get("profiles") or {}).items()
            },
            importance={
                Role(k): ImportanceWeights.from_record(v)
                for k, v in (record.get("importance") or {}).items()
            },
            turns=tuple(Turn.from_record(t) for t in record["turns"]),
            outcome=Outcome.from_record(record["outcome"]),
            metadata=dict(record.get("metadata") or {}),
        )


def dialogue_to_line(dialogue: Dialogue) -> str:
    return json.dumps(dialogue.to_record(), ensure_ascii=False)


def _parse_line(line: str, lineno: int, max_rounds: int) -> Dialogue:
    try:
        record = json.loads(line)
        if not isinstance(record, dict):
            raise ValueError("record is not a JSON object")
        dialogue = Dialogue.from_record(record)
    except UnknownStrategyError as e:
        raise CorpusValidationError([f"line {lineno}: {e}"]) from e
    except (KeyError, TypeError) as e:
        raise CorpusValidationError([f"line {lineno}: malformed record, bad field {e}"]) from e
    except (ValueError, AttributeError, NegotiationError) as e:
        raise CorpusValidationError([f"line {lineno}: malformed record, {e}"]) from e

    issues = dialogue.validate(max_rounds)
    if issues:
        raise CorpusValidationError([f"line {lineno}: {issue}" for issue in issues])
    return dialogue


def iter_corpus(
    path: str | Path, max_rounds: int = MAX_ROUNDS, issues: list[str] | None = None
) -> Iterator[Dialogue]:
    """Stream dialogues from a corpus file.

    Invalid records and repeated dialogue ids raise ``CorpusValidationError`` unless an
    ``issues`` list is given, in which case they are recorded there and skipped.
    """
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                dialogue = _parse_line(line, lineno, max_rounds)
                if dialogue.id in seen:
                    first = seen[dialogue.id]
                    raise CorpusValidationError(
                        [f"line {lineno}: duplicate dialogue id {dialogue.id!r} (first on line {first})"]
                    )
            except CorpusValidationError as e:
                if issues is None:
                    raise
                issues.extend(e.issues)
                continue
            seen[dialogue.id] = lineno
            yield dialogue


@dataclass
class CorpusReadResult:
    dialogues: list[Dialogue] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)


def read_corpus(path: str | Path, max_rounds: int = MAX_ROUNDS) -> CorpusReadResult:
    """Read every record, collecting invalid ones as issues instead of raising."""
    result = CorpusReadResult()
    result.dialogues = list(iter_corpus(path, max_rounds, issues=result.issues))
    return result


def load_corpus(
    path: str | Path, strict: bool = True, max_rounds: int = MAX_ROUNDS
) -> list[Dialogue]:
    result = read_corpus(path, max_rounds)
    if strict and result.issues:
        raise CorpusValidationError(result.issues)
    return result.dialogues


def write_corpus(dialogues: list[Dialogue], path: str | Path) -> int:
    """Write one dialogue per line; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for dialogue in dialogues:
            f.write(dialogue_to_line(dialogue) + "\n")
    return len(dialogues)


def append_dialogue(path: str | Path, dialogue: Dialogue) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(dialogue_to_line(dialogue) + "\n")
