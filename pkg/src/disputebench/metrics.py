"""Strategic-behavior metrics, outcome variables and staged strategy profiles per speaker."""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from disputebench.corpus import (
    STRATEGIES,
    TRAITS,
    Dialogue,
    DialogueSource,
    IrpCategory,
    IrpStrategy,
    Trait,
    TraitScale,
    Turn,
    category_of,
)
from disputebench.negotiation import Role

DEFAULT_STAGES = 5
MISSING = "NA"

POSITION_CODE = {Role.BUYER: -1, Role.SELLER: 1}

OUTCOME_DVS = ("score", "accept", "notWalkAway")
BEHAVIOR_DVS = ("coopRatio", "compRatio", "coopRecip", "compRecip", "escalation", "deescalation")
STRATEGY_DVS = tuple(f"ratio_{s.value}" for s in STRATEGIES)
ALL_DVS = OUTCOME_DVS + BEHAVIOR_DVS


class MetricsError(Exception):
    """Base class for metric failures."""


class UnannotatedDialogueError(MetricsError, ValueError):
    pass


class MissingProfileError(MetricsError, ValueError):
    pass


class ThresholdKindError(MetricsError, ValueError):
    pass


def _strategies(turn: Turn, dialogue_id: str) -> list[IrpStrategy]:
    labels = []
    for seg in turn.segments:
        if seg.strategy is None:
            raise UnannotatedDialogueError(f"{dialogue_id} turn {turn.index} has an unannotated segment")
        labels.append(seg.strategy)
    return labels


def turn_categories(turn: Turn, dialogue_id: str = "") -> frozenset[IrpCategory]:
    return frozenset(category_of(s) for s in _strategies(turn, dialogue_id))


def is_competitive(categories: frozenset[IrpCategory]) -> bool:
    return IrpCategory.COMPETITIVE in categories


def _percent(numerator: int, denominator: int) -> float | None:
    return None if denominator == 0 else 100.0 * numerator / denominator


def _reply_pairs(
    dialogue: Dialogue, speaker: Role
) -> list[tuple[frozenset[IrpCategory], frozenset[IrpCategory]]]:
    """(partner turn, speaker's immediate reply) category sets; reply-less partner turns are skipped."""
    pairs = []
    turns = dialogue.turns
    for prev, nxt in zip(turns, turns[1:], strict=False):
        if prev.speaker is speaker.partner and nxt.speaker is speaker:
            pairs.append((turn_categories(prev, dialogue.id), turn_categories(nxt, dialogue.id)))
    return pairs


def strategy_counts(dialogue: Dialogue, speaker: Role) -> dict[IrpStrategy, int]:
    counts = dict.fromkeys(STRATEGIES, 0)
    for turn in dialogue.turns_of(speaker):
        for strategy in _strategies(turn, dialogue.id):
            counts[strategy] += 1
    return counts


def irp_ratio(
    dialogue: Dialogue, speaker: Role, target: IrpCategory | IrpStrategy
) -> float | None:
    """Percentage of the speaker's segments labelled with ``target``."""
    counts = strategy_counts(dialogue, speaker)
    total = sum(counts.values())
    if isinstance(target, IrpStrategy):
        hits = counts[target]
    else:
        hits = sum(n for s, n in counts.items() if category_of(s) is IrpCategory(target))
    return _percent(hits, total)


def irp_reciprocity(dialogue: Dialogue, speaker: Role, category: IrpCategory) -> float | None:
    """Share of the partner's ``category`` turns that the speaker answers in kind."""
    category = IrpCategory(category)
    if category not in (IrpCategory.COOPERATIVE, IrpCategory.COMPETITIVE):
        raise ValueError("reciprocity is defined for Cooperative and Competitive only")
    pairs = [(p, r) for p, r in _reply_pairs(dialogue, speaker) if category in p]
    return _percent(sum(category in r for _, r in pairs), len(pairs))


def escalation_ratio(dialogue: Dialogue, speaker: Role) -> float | None:
    pairs = [(p, r) for p, r in _reply_pairs(dialogue, speaker) if not is_competitive(p)]
    return _percent(sum(is_competitive(r) for _, r in pairs), len(pairs))


def deescalation_ratio(dialogue: Dialogue, speaker: Role) -> float | None:
    pairs = [(p, r) for p, r in _reply_pairs(dialogue, speaker) if is_competitive(p)]
    return _percent(sum(not is_competitive(r) for _, r in pairs), len(pairs))


def stage_bins(n_turns: int, n_stages: int) -> list[int]:
    """As-equal-as-possible contiguous bin sizes, earlier bins larger on remainder."""
    if n_stages < 1:
        raise ValueError("n_stages must be at least 1")
    base, remainder = divmod(n_turns, n_stages)
    return [base + 1] * remainder + [base] * (n_stages - remainder)


@dataclass(frozen=True)
class StageDistribution:
    """Row-normalized strategy percentages per dialogue stage; rows without segments are NaN."""

    matrix: np.ndarray
    counts: np.ndarray

    @property
    def n_stages(self) -> int:
        return self.matrix.shape[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.matrix,
            index=[f"stage_{i + 1}" for i in range(self.n_stages)],
            columns=[s.value for s in STRATEGIES],
        )


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = 100.0 * counts / totals
    matrix[totals[:, 0] == 0] = np.nan
    return matrix


def _stage_counts(dialogue: Dialogue, speaker: Role | None, n_stages: int) -> np.ndarray:
    counts = np.zeros((n_stages, len(STRATEGIES)), dtype=np.int64)
    column = {s: j for j, s in enumerate(STRATEGIES)}
    start = 0
    for stage, size in enumerate(stage_bins(len(dialogue.turns), n_stages)):
        for turn in dialogue.turns[start : start + size]:
            strategies = _strategies(turn, dialogue.id)
            if speaker is None or turn.speaker is speaker:
                for strategy in strategies:
                    counts[stage, column[strategy]] += 1
        start += size
    return counts


def stage_distribution(
    dialogue: Dialogue, speaker: Role | None = None, n_stages: int = DEFAULT_STAGES
) -> StageDistribution:
    counts = _stage_counts(dialogue, speaker, n_stages)
    return StageDistribution(_normalize_rows(counts.astype(float)), counts)


def corpus_stage_distribution(
    items: Iterable[tuple[Dialogue, Role | None]], n_stages: int = DEFAULT_STAGES
) -> StageDistribution:
    """Pool stage counts over (dialogue, speaker) pairs before normalizing."""
    counts = np.zeros((n_stages, len(STRATEGIES)), dtype=np.int64)
    for dialogue, speaker in items:
        counts += _stage_counts(dialogue, speaker, n_stages)
    return StageDistribution(_normalize_rows(counts.astype(float)), counts)


@dataclass(frozen=True)
class SpeakerRecord:
    """One analysis row: a dialogue participant with own and partner traits and every DV."""

    dialogue_id: str
    role: Role
    position: int
    source: DialogueSource
    trait_scale: TraitScale
    self_traits: dict[Trait, float]
    partner_traits: dict[Trait, float]
    score: float | None
    accept: int
    not_walk_away: int
    coop_ratio: float | None
    comp_ratio: float | None
    coop_recip: float | None
    comp_recip: float | None
    escalation: float | None
    deescalation: float | None
    strategy_counts: dict[IrpStrategy, int] = field(default_factory=dict)
    strategy_ratios: dict[IrpStrategy, float | None] = field(default_factory=dict)

    def dv(self, name: str) -> float | None:
        if name.startswith("ratio_"):
            return self.strategy_ratios[IrpStrategy(name.removeprefix("ratio_"))]
        return {
            "score": self.score,
            "accept": self.accept,
            "notWalkAway": self.not_walk_away,
            "coopRatio": self.coop_ratio,
            "compRatio": self.comp_ratio,
            "coopRecip": self.coop_recip,
            "compRecip": self.comp_recip,
            "escalation": self.escalation,
            "deescalation": self.deescalation,
        }[name]


def speaker_record(dialogue: Dialogue, role: Role) -> SpeakerRecord:
    if set(dialogue.profiles) != set(Role):
        raise MissingProfileError(f"{dialogue.id} is missing personality profiles")
    own, partner = dialogue.profiles[role], dialogue.profiles[role.partner]
    if own.scale is not partner.scale:
        raise MissingProfileError(f"{dialogue.id} mixes trait scales between roles")
    counts = strategy_counts(dialogue, role)
    total = sum(counts.values())
    return SpeakerRecord(
        dialogue_id=dialogue.id,
        role=role,
        position=POSITION_CODE[role],
        source=dialogue.source,
        trait_scale=own.scale,
        self_traits={t: own[t] for t in TRAITS},
        partner_traits={t: partner[t] for t in TRAITS},
        score=dialogue.outcome.score_of(role),
        accept=dialogue.outcome.accept(role),
        not_walk_away=dialogue.outcome.not_walk_away(role),
        coop_ratio=irp_ratio(dialogue, role, IrpCategory.COOPERATIVE),
        comp_ratio=irp_ratio(dialogue, role, IrpCategory.COMPETITIVE),
        coop_recip=irp_reciprocity(dialogue, role, IrpCategory.COOPERATIVE),
        comp_recip=irp_reciprocity(dialogue, role, IrpCategory.COMPETITIVE),
        escalation=escalation_ratio(dialogue, role),
        deescalation=deescalation_ratio(dialogue, role),
        strategy_counts=counts,
        strategy_ratios={s: _percent(n, total) for s, n in counts.items()},
    )


def build_speaker_records(corpus: Iterable[Dialogue]) -> list[SpeakerRecord]:
    """Two records per dialogue, Buyer first."""
    return [speaker_record(d, role) for d in corpus for role in (Role.BUYER, Role.SELLER)]


@dataclass(frozen=True)
class TraitThresholds:
    """Minimum self-trait value for the high group: six-point level, or strict decimal bound."""

    six_point: int = 2
    decimal: float = 3.5

    def is_high(self, value: float, scale: TraitScale) -> bool:
        if scale is TraitScale.SIX_POINT:
            return value >= self.six_point
        return value > self.decimal


def high_trait_filter(
    records: Iterable[SpeakerRecord],
    trait: Trait,
    thresholds: TraitThresholds | None = None,
    kind: TraitScale | None = None,
) -> list[SpeakerRecord]:
    """Keep records whose own ``trait`` is high on their scale; ``kind`` pins the expected scale."""
    thresholds = thresholds or TraitThresholds()
    kept = []
    for record in records:
        if kind is not None and record.trait_scale is not TraitScale(kind):
            raise ThresholdKindError(
                f"{record.dialogue_id} carries {record.trait_scale.value} traits, "
                f"expected {TraitScale(kind).value}"
            )
        if thresholds.is_high(record.self_traits[Trait(trait)], record.trait_scale):
            kept.append(record)
    return kept


def heatmap_rows(
    records: Sequence[SpeakerRecord], thresholds: TraitThresholds | None = None
) -> pd.DataFrame:
    """Strategy distribution (percent, rows sum to 100) of each high-trait group."""
    rows = {}
    for trait in TRAITS:
        counts = np.zeros(len(STRATEGIES))
        for record in high_trait_filter(records, trait, thresholds):
            counts += [record.strategy_counts.get(s, 0) for s in STRATEGIES]
        total = counts.sum()
        rows[f"High {trait.value}"] = 100.0 * counts / total if total else np.full(len(STRATEGIES), np.nan)
    return pd.DataFrame.from_dict(rows, orient="index", columns=[s.value for s in STRATEGIES])


def records_frame(records: Sequence[SpeakerRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row: dict = {
            "dialogue_id": r.dialogue_id,
            "role": r.role.value,
            "position": r.position,
            "source": r.source.value,
            "trait_scale": r.trait_scale.value,
        }
        row.update({f"SELF_{t.value}": r.self_traits[t] for t in TRAITS})
        row.update({f"PARTNER_{t.value}": r.partner_traits[t] for t in TRAITS})
        row.update({name: r.dv(name) for name in ALL_DVS + STRATEGY_DVS})
        rows.append(row)
    columns = (
        ["dialogue_id", "role", "position", "source", "trait_scale"]
        + [f"SELF_{t.value}" for t in TRAITS]
        + [f"PARTNER_{t.value}" for t in TRAITS]
        + list(ALL_DVS + STRATEGY_DVS)
    )
    frame = pd.DataFrame(rows, columns=columns)
    for name in ALL_DVS + STRATEGY_DVS:
        frame[name] = frame[name].astype(float)
    return frame


def write_records_table(records: Sequence[SpeakerRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(path, index=False, na_rep=MISSING)


def write_matrix(frame: pd.DataFrame, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, na_rep=MISSING)
