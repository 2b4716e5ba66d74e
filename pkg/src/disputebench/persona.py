"""Personality profile sampling, adjective persona prompts and issue-importance assignment."""

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from disputebench.corpus import (
    LEVELS,
    TRAITS,
    PersonalityProfile,
    Trait,
    TraitLevel,
    TraitScale,
)
from disputebench.negotiation import ISSUES, ImportanceWeights, Issue, Role

BASE_APOLOGY_WEIGHT = 20.0
AGREEABLENESS_COEFFICIENT = 2.13
OTHER_WEIGHT_RANGE = (5.0, 40.0)
WEIGHT_FLOOR = 1.0
ADJECTIVES_PER_TRAIT = 3


class PersonaError(Exception):
    """Base class for persona failures."""


class DegenerateDistributionError(PersonaError, ValueError):
    pass


class LexiconError(PersonaError, ValueError):
    pass


def _data_text(name: str) -> str:
    return resources.files("disputebench").joinpath("data", name).read_text(encoding="utf-8")


def map_human_to_level(score: float) -> TraitLevel:
    """Equal-width binning of a 1-5 human trait score onto the six-point scale (bins left-closed)."""
    if not (isinstance(score, int | float) and math.isfinite(score) and 1.0 <= score <= 5.0):
        raise ValueError(f"human trait score must lie in [1, 5], got {score!r}")
    index = min(math.floor((score - 1.0) * 1.5), len(LEVELS) - 1)
    return TraitLevel.from_int(LEVELS[index])


def quantile_edges(scores: Sequence[float]) -> np.ndarray:
    """Five interior cut points splitting ``scores`` into six equal-mass bins."""
    values = np.asarray(scores, dtype=float)
    if values.size == 0:
        raise DegenerateDistributionError("no human scores to bin")
    return np.quantile(values, np.arange(1, 6) / 6.0)


def map_human_to_level_quantile(score: float, edges: np.ndarray) -> TraitLevel:
    if not 1.0 <= score <= 5.0:
        raise ValueError(f"human trait score must lie in [1, 5], got {score!r}")
    index = int(np.searchsorted(edges, score, side="right"))
    return TraitLevel.from_int(LEVELS[min(index, len(LEVELS) - 1)])


@dataclass(frozen=True)
class TraitDistribution:
    """Per-trait histogram over the six levels, ordered as ``LEVELS``."""

    histograms: dict[Trait, tuple[float, ...]]
    human_scores: dict[Trait, tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        histograms = {Trait(k): tuple(float(w) for w in v) for k, v in self.histograms.items()}
        if set(histograms) != set(TRAITS):
            raise DegenerateDistributionError("distribution must cover all five traits")
        for trait, weights in histograms.items():
            if len(weights) != len(LEVELS):
                raise DegenerateDistributionError(
                    f"{trait.value} histogram needs {len(LEVELS)} weights, got {len(weights)}"
                )
            if any(w < 0 or not math.isfinite(w) for w in weights) or sum(weights) <= 0:
                raise DegenerateDistributionError(
                    f"{trait.value} histogram must be nonnegative with positive mass"
                )
        object.__setattr__(self, "histograms", histograms)

    def probabilities(self, trait: Trait) -> np.ndarray:
        weights = np.asarray(self.histograms[Trait(trait)], dtype=float)
        return weights / weights.sum()

    @classmethod
    def uniform(cls) -> "TraitDistribution":
        return cls({trait: (1.0,) * len(LEVELS) for trait in TRAITS})

    @classmethod
    def point_mass(cls, level: int) -> "TraitDistribution":
        weights = tuple(1.0 if lv == level else 0.0 for lv in LEVELS)
        return cls({trait: weights for trait in TRAITS})

    @classmethod
    def from_record(cls, record: dict) -> "TraitDistribution":
        levels = record.get("levels", list(LEVELS))
        if tuple(levels) != LEVELS:
            raise DegenerateDistributionError(f"histogram levels must be {list(LEVELS)}")
        human = record.get("human_scores")
        return cls(
            {Trait(k): tuple(v) for k, v in record["histograms"].items()},
            {Trait(k): tuple(v) for k, v in human.items()} if human else None,
        )

    def to_record(self) -> dict:
        record: dict = {
            "levels": list(LEVELS),
            "histograms": {t.value: list(self.histograms[t]) for t in TRAITS},
        }
        if self.human_scores:
            record["human_scores"] = {t.value: list(v) for t, v in self.human_scores.items()}
        return record

    @classmethod
    def load(cls, path: str | Path) -> "TraitDistribution":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> "TraitDistribution":
        return cls.from_record(json.loads(_data_text("trait_distribution.json")))

    @classmethod
    def from_human_scores(
        cls, scores: dict[Trait, Sequence[float]], mode: str = "equal"
    ) -> "TraitDistribution":
        """Build six-level histograms from raw 1-5 human scores by equal-width or quantile bins."""
        if mode not in ("equal", "quantile"):
            raise ValueError(f"unknown binning mode {mode!r}")
        histograms = {}
        for trait in TRAITS:
            values = [float(v) for v in scores[trait]]
            if mode == "equal":
                levels = [map_human_to_level(v).value for v in values]
            else:
                edges = quantile_edges(values)
                levels = [map_human_to_level_quantile(v, edges).value for v in values]
            histograms[trait] = tuple(float(levels.count(lv)) for lv in LEVELS)
        return cls(histograms, {trait: tuple(float(v) for v in scores[trait]) for trait in TRAITS})


def sample_levels(dist: TraitDistribution, n: int, seed: int) -> dict[Trait, np.ndarray]:
    """Draw ``n`` canonical levels per trait, traits independent."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    levels = np.asarray(LEVELS)
    return {trait: rng.choice(levels, size=n, p=dist.probabilities(trait)) for trait in TRAITS}


def sample_profiles(dist: TraitDistribution, n: int, seed: int) -> list[PersonalityProfile]:
    drawn = sample_levels(dist, n, seed)
    return [
        PersonalityProfile.from_levels({trait: int(drawn[trait][i]) for trait in TRAITS})
        for i in range(n)
    ]


def sample_profile(dist: TraitDistribution, seed: int) -> PersonalityProfile:
    return sample_profiles(dist, 1, seed)[0]


@dataclass(frozen=True)
class AdjectiveLexicon:
    """Bipolar (low pole, high pole) adjective pairs per trait."""

    pairs: dict[Trait, tuple[tuple[str, str], ...]]

    def __post_init__(self) -> None:
        pairs = {Trait(k): tuple((str(lo), str(hi)) for lo, hi in v) for k, v in self.pairs.items()}
        if set(pairs) != set(TRAITS):
            raise LexiconError("lexicon must cover all five traits")
        for trait, trait_pairs in pairs.items():
            if len(trait_pairs) < ADJECTIVES_PER_TRAIT:
                raise LexiconError(
                    f"{trait.value} has {len(trait_pairs)} adjective pairs, "
                    f"need at least {ADJECTIVES_PER_TRAIT}"
                )
            if any(not lo.strip() or not hi.strip() for lo, hi in trait_pairs):
                raise LexiconError(f"{trait.value} has an empty adjective")
        object.__setattr__(self, "pairs", pairs)

    @property
    def total_pairs(self) -> int:
        return sum(len(p) for p in self.pairs.values())

    @classmethod
    def from_record(cls, record: dict) -> "AdjectiveLexicon":
        return cls({Trait(k): tuple(tuple(pair) for pair in v) for k, v in record.items()})

    @classmethod
    def load(cls, path: str | Path) -> "AdjectiveLexicon":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> "AdjectiveLexicon":
        return cls.from_record(json.loads(_data_text("bfi_adjectives.json")))


def intensify(word: str, degree: int) -> str:
    if degree == 3:
        return f"very {word}"
    if degree == 1:
        return f"a bit {word}"
    return word


@dataclass(frozen=True)
class PersonaPrompt:
    text: str
    adjectives: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(self.adjectives) != ADJECTIVES_PER_TRAIT * len(TRAITS):
            raise ValueError(f"persona needs {ADJECTIVES_PER_TRAIT * len(TRAITS)} adjectives")


def build_persona_prompt(
    profile: PersonalityProfile, lexicon: AdjectiveLexicon, seed: int
) -> PersonaPrompt:
    """Pick three pairs per trait, take the pole matching the level's sign and intensify by degree."""
    if profile.scale is not TraitScale.SIX_POINT:
        raise ValueError("persona prompts need a six-point profile")
    rng = np.random.default_rng(seed)
    adjectives: list[str] = []
    for trait in TRAITS:
        trait_pairs = lexicon.pairs[trait]
        if len(trait_pairs) < ADJECTIVES_PER_TRAIT:
            raise LexiconError(f"{trait.value} has fewer than {ADJECTIVES_PER_TRAIT} pairs")
        level = profile.level(trait)
        chosen = rng.choice(len(trait_pairs), size=ADJECTIVES_PER_TRAIT, replace=False)
        for index in chosen:
            low, high = trait_pairs[int(index)]
            adjectives.append(intensify(high if level.polarity > 0 else low, level.degree))

    text = f"You are a character who is {', '.join(adjectives[:-1])}, and {adjectives[-1]}."
    return PersonaPrompt(text=text, adjectives=tuple(adjectives))


def own_apology_issue(role: Role) -> Issue:
    """The apology a party receives: SAP for the Buyer, BAP for the Seller."""
    return Issue.SAP if Role(role) is Role.BUYER else Issue.BAP


def _agreeableness_level(profile: PersonalityProfile) -> int:
    if profile.scale is TraitScale.SIX_POINT:
        return profile.level(Trait.AGR).value
    return map_human_to_level(profile[Trait.AGR]).value


def raw_importance(
    profile: PersonalityProfile,
    role: Role,
    seed: int,
    base_weight: float = BASE_APOLOGY_WEIGHT,
    coefficient: float = AGREEABLENESS_COEFFICIENT,
    weight_range: tuple[float, float] = OTHER_WEIGHT_RANGE,
) -> dict[Issue, float]:
    """Pre-normalization weights: agreeableness-driven apology weight, uniform draws elsewhere."""
    rng = np.random.default_rng(seed)
    own = own_apology_issue(role)
    others = [issue for issue in ISSUES if issue is not own]
    draws = rng.uniform(weight_range[0], weight_range[1], size=len(others))
    raw = {issue: float(w) for issue, w in zip(others, draws, strict=True)}
    raw[own] = base_weight + coefficient * _agreeableness_level(profile)
    return {issue: raw[issue] for issue in ISSUES}


def assign_importance(profile: PersonalityProfile, role: Role, seed: int) -> ImportanceWeights:
    return ImportanceWeights.normalized(raw_importance(profile, role, seed), floor=WEIGHT_FLOOR)
