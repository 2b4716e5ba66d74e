"""Toy dialogue and record builders shared by the test modules."""

import httpx
import numpy as np

from disputebench.corpus import (
    STRATEGIES,
    TRAITS,
    Dialogue,
    DialogueSource,
    IrpStrategy,
    PersonalityProfile,
    Segment,
    Trait,
    TraitScale,
    Turn,
)
from disputebench.metrics import POSITION_CODE, SpeakerRecord
from disputebench.negotiation import (
    ISSUES,
    Accept,
    ApologyLevel,
    ImportanceWeights,
    Issue,
    IssueAllocation,
    Message,
    Outcome,
    OutcomeKind,
    RefundLevel,
    ReviewLevel,
    Role,
    Submit,
    WalkAway,
    score,
)

BUYER_WEIGHTS = ImportanceWeights(
    {Issue.REF: 40, Issue.SNR: 25, Issue.BNR: 10, Issue.SAP: 20, Issue.BAP: 5}
)
EQUAL_WEIGHTS = ImportanceWeights({issue: 20.0 for issue in ISSUES})

PARTIAL_DEAL = IssueAllocation(
    RefundLevel.PARTIAL,
    ReviewLevel.REMOVE,
    ReviewLevel.REMOVE,
    ApologyLevel.APOLOGIZE,
    ApologyLevel.NOT_APOLOGIZE,
)


def profile(level: int = 1, **overrides: int) -> PersonalityProfile:
    values = {trait: level for trait in TRAITS}
    values.update({Trait(k): v for k, v in overrides.items()})
    return PersonalityProfile(values, TraitScale.SIX_POINT)


def decimal_profile(value: float = 3.0, **overrides: float) -> PersonalityProfile:
    values = {trait: value for trait in TRAITS}
    values.update({Trait(k): v for k, v in overrides.items()})
    return PersonalityProfile(values, TraitScale.DECIMAL)


def labelled_turns(labels: list[list[str]], opener: Role = Role.BUYER) -> list[Turn]:
    """One Message turn per entry, speakers alternating from ``opener``."""
    turns = []
    speaker = opener
    for i, turn_labels in enumerate(labels):
        segments = tuple(
            Segment(f"segment {i}.{k}", IrpStrategy.parse(label))
            for k, label in enumerate(turn_labels)
        )
        text = " ".join(seg.text for seg in segments)
        turns.append(Turn(i, speaker, text, Message(text), segments))
        speaker = speaker.partner
    return turns


def annotated_dialogue(
    labels: list[list[str]],
    dialogue_id: str = "d-0",
    opener: Role = Role.BUYER,
    profiles: dict[Role, PersonalityProfile] | None = None,
    source: DialogueSource = DialogueSource.SIMULATED,
) -> Dialogue:
    """A NoAgreement dialogue made only of labelled messages."""
    return Dialogue(
        id=dialogue_id,
        turns=tuple(labelled_turns(labels, opener)),
        outcome=Outcome(OutcomeKind.NO_AGREEMENT),
        source=source,
        profiles=profiles if profiles is not None else {Role.BUYER: profile(1), Role.SELLER: profile(-1)},
    )


def _next_speaker(turns: list[Turn], opener: Role) -> Role:
    return turns[-1].speaker.partner if turns else opener


def agreement_dialogue(
    labels: list[list[str]],
    dialogue_id: str = "d-agree",
    opener: Role = Role.BUYER,
    offer: IssueAllocation = PARTIAL_DEAL,
    profiles: dict[Role, PersonalityProfile] | None = None,
) -> Dialogue:
    """Labelled messages, then a bare submission and its acceptance."""
    turns = labelled_turns(labels, opener)
    proposer = _next_speaker(turns, opener)
    line = offer.to_submission()
    turns.append(Turn(len(turns), proposer, line, Submit(offer)))
    turns.append(Turn(len(turns), proposer.partner, "ACCEPT-DEAL", Accept()))
    weights = {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS}
    return Dialogue(
        id=dialogue_id,
        turns=tuple(turns),
        outcome=Outcome(
            OutcomeKind.AGREEMENT,
            acceptor=proposer.partner,
            allocation=offer,
            scores={role: score(offer, weights[role], role) for role in Role},
        ),
        profiles=profiles if profiles is not None else {Role.BUYER: profile(2), Role.SELLER: profile(-2)},
        importance=weights,
    )


def walk_away_dialogue(
    labels: list[list[str]], dialogue_id: str = "d-walk", opener: Role = Role.BUYER
) -> Dialogue:
    turns = labelled_turns(labels, opener)
    walker = _next_speaker(turns, opener)
    turns.append(Turn(len(turns), walker, "WALK-AWAY", WalkAway()))
    return Dialogue(
        id=dialogue_id,
        turns=tuple(turns),
        outcome=Outcome(OutcomeKind.WALK_AWAY, walker=walker),
        profiles={Role.BUYER: profile(1), Role.SELLER: profile(3)},
    )


def random_annotated_dialogue(
    rng: np.random.Generator, dialogue_id: str, max_turns: int = 12, max_segments: int = 4
) -> Dialogue:
    """Random labelled dialogue; turns may carry zero segments."""
    n_turns = int(rng.integers(0, max_turns + 1))
    sizes = rng.integers(0, max_segments + 1, size=n_turns)
    labels = [[STRATEGIES[int(k)].value for k in rng.integers(0, len(STRATEGIES), size=int(s))] for s in sizes]
    levels = [-3, -2, -1, 1, 2, 3]
    profiles = {
        role: PersonalityProfile.from_levels({t: levels[int(rng.integers(0, 6))] for t in TRAITS})
        for role in Role
    }
    opener = Role.BUYER if rng.random() < 0.5 else Role.SELLER
    return annotated_dialogue(labels, dialogue_id, opener, profiles)


def chat_reply(content: str, reply_id: str = "resp-1") -> httpx.Response:
    """An OpenAI-style completion response."""
    return httpx.Response(
        200,
        json={"id": reply_id, "choices": [{"message": {"role": "assistant", "content": content}}]},
        headers={"x-request-id": f"req-{reply_id}"},
    )


def speaker_record(
    dialogue_id: str,
    role: Role,
    self_traits: dict[Trait, float],
    partner_traits: dict[Trait, float],
    scale: TraitScale = TraitScale.SIX_POINT,
    **dvs,
) -> SpeakerRecord:
    """A SpeakerRecord with explicit DV values; unspecified ratios are missing."""
    counts = dvs.pop("strategy_counts", {s: 0 for s in STRATEGIES})
    return SpeakerRecord(
        dialogue_id=dialogue_id,
        role=role,
        position=POSITION_CODE[role],
        source=DialogueSource.SIMULATED if scale is TraitScale.SIX_POINT else DialogueSource.HUMAN,
        trait_scale=scale,
        self_traits=self_traits,
        partner_traits=partner_traits,
        score=dvs.get("score"),
        accept=dvs.get("accept", 0),
        not_walk_away=dvs.get("not_walk_away", 1),
        coop_ratio=dvs.get("coop_ratio"),
        comp_ratio=dvs.get("comp_ratio"),
        coop_recip=dvs.get("coop_recip"),
        comp_recip=dvs.get("comp_recip"),
        escalation=dvs.get("escalation"),
        deescalation=dvs.get("deescalation"),
        strategy_counts=counts,
        strategy_ratios={s: dvs.get(f"ratio_{s.value}") for s in STRATEGIES},
    )


def random_records(
    rng: np.random.Generator,
    n_dialogues: int,
    score_fn=None,
    walk_rate: float = 0.1,
) -> list[SpeakerRecord]:
    """Two records per synthetic dialogue with continuous traits and every DV populated."""
    records = []
    for i in range(n_dialogues):
        traits = {role: {t: float(rng.normal()) for t in TRAITS} for role in Role}
        accepted = Role.BUYER if rng.random() < 0.5 else Role.SELLER
        for role in Role:
            own, partner = traits[role], traits[role.partner]
            noise = float(rng.normal(0, 5))
            value = score_fn(own, partner, role) + noise if score_fn else 50 + noise
            records.append(
                speaker_record(
                    f"syn-{i:04d}",
                    role,
                    own,
                    partner,
                    scale=TraitScale.DECIMAL,
                    score=value,
                    accept=int(role is accepted),
                    not_walk_away=int(rng.random() >= walk_rate),
                    coop_ratio=float(rng.uniform(0, 100)),
                    comp_ratio=float(rng.uniform(0, 100)),
                    coop_recip=float(rng.uniform(0, 100)),
                    comp_recip=float(rng.uniform(0, 100)),
                    escalation=float(rng.uniform(0, 100)),
                    deescalation=float(rng.uniform(0, 100)),
                )
            )
    return records
