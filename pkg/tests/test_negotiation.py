import itertools
import json
from dataclasses import replace

import numpy as np
import pytest
from builders import BUYER_WEIGHTS, EQUAL_WEIGHTS, PARTIAL_DEAL

from disputebench.negotiation import (
    CREDIT,
    ISSUES,
    Accept,
    ApologyLevel,
    IllegalActionError,
    ImportanceWeights,
    Issue,
    IssueAllocation,
    MalformedOfferError,
    Message,
    Outcome,
    OutcomeKind,
    RefundLevel,
    Reject,
    ReviewLevel,
    Role,
    Submit,
    TerminalStateError,
    WalkAway,
    WeightsNotNormalizedError,
    all_allocations,
    apply_action,
    initial_state,
    outcome_of,
    parse_action,
    replay,
    score,
    strip_action_tokens,
)

EXAMPLE_SUBMISSION = (
    'SUBMISSION: {"REF": "None", "SNR": "remove", "BNR": "remove", '
    '"SAP": "apologize", "BAP": "not apologize"}'
)

BUYER_BEST = IssueAllocation(
    RefundLevel.FULL, ReviewLevel.REMOVE, ReviewLevel.KEEP, ApologyLevel.APOLOGIZE, ApologyLevel.NOT_APOLOGIZE
)
BUYER_WORST = IssueAllocation(
    RefundLevel.NONE, ReviewLevel.KEEP, ReviewLevel.REMOVE, ApologyLevel.NOT_APOLOGIZE, ApologyLevel.APOLOGIZE
)


def test_parse_submission_example():
    action = parse_action(EXAMPLE_SUBMISSION)

    assert action == Submit(
        IssueAllocation(
            RefundLevel.NONE,
            ReviewLevel.REMOVE,
            ReviewLevel.REMOVE,
            ApologyLevel.APOLOGIZE,
            ApologyLevel.NOT_APOLOGIZE,
        )
    )


def test_submission_rendering_matches_wire_format():
    offer = parse_action(EXAMPLE_SUBMISSION).offer
    assert offer.to_submission() == EXAMPLE_SUBMISSION


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("ACCEPT-DEAL", Accept()),
        ("REJECT-DEAL", Reject()),
        ("WALK-AWAY", WalkAway()),
        ("Thank you, we have a deal.\nACCEPT-DEAL", Accept()),
        ("I understand your concern.", Message("I understand your concern.")),
        ("I will not ACCEPT-DEAL yet.", Message("I will not ACCEPT-DEAL yet.")),
    ],
)
def test_parse_action_tokens(text, expected):
    assert parse_action(text) == expected


def test_first_token_line_wins():
    text = f"Here is my offer.\n{EXAMPLE_SUBMISSION}\nACCEPT-DEAL"
    assert isinstance(parse_action(text), Submit)


@pytest.mark.parametrize(
    "keys",
    [keys for n in range(len(ISSUES)) for keys in itertools.combinations([i.value for i in ISSUES], n)],
)
def test_submission_with_missing_issues_is_malformed(keys):
    full = {"REF": "full", "SNR": "remove", "BNR": "not remove", "SAP": "apologize", "BAP": "not apologize"}
    body = {k: full[k] for k in keys}
    with pytest.raises(MalformedOfferError):
        parse_action(f"SUBMISSION: {json.dumps(body)}")


@pytest.mark.parametrize(
    "body",
    [
        '{"REF": "full", "SNR": "remove", "BNR": "remove", "SAP": "apologize", "BAP": "apologize", "TIP": "yes"}',
        '{"REF": 75, "SNR": "remove", "BNR": "remove", "SAP": "apologize", "BAP": "apologize"}',
        '{"REF": "some", "SNR": "remove", "BNR": "remove", "SAP": "apologize", "BAP": "apologize"}',
        "not json at all",
        '["REF", "SNR"]',
    ],
)
def test_malformed_submission_bodies(body):
    with pytest.raises(MalformedOfferError):
        parse_action(f"SUBMISSION: {body}")


def test_surface_forms_are_normalized():
    text = (
        'SUBMISSION: {"REF": "Partial refund", "SNR": "keep", "BNR": "Remove", '
        '"SAP": "no apology", "BAP": "apologise"}'
    )
    offer = parse_action(text).offer

    assert offer.ref is RefundLevel.PARTIAL
    assert offer.snr is ReviewLevel.KEEP
    assert offer.bnr is ReviewLevel.REMOVE
    assert offer.sap is ApologyLevel.NOT_APOLOGIZE
    assert offer.bap is ApologyLevel.APOLOGIZE


def test_strip_action_tokens_keeps_free_text():
    text = f"Let's settle this.\n{EXAMPLE_SUBMISSION}\nACCEPT-DEAL"
    assert strip_action_tokens(text) == "Let's settle this."
    assert strip_action_tokens("WALK-AWAY") == ""


def test_all_allocations_enumerates_every_deal():
    deals = all_allocations()
    assert len(deals) == 48
    assert len(set(deals)) == 48


def test_message_without_offer_advances_turns():
    state = initial_state()
    state = apply_action(state, Message("Hello."))

    assert not state.is_terminal
    assert state.to_move is Role.SELLER
    assert state.current_round == 1
    state = apply_action(state, Message("Hi."))
    assert state.current_round == 2
    assert state.rounds_completed == 1


def test_accept_standing_offer_reaches_agreement():
    state = replay([Submit(PARTIAL_DEAL), Accept()])

    assert state.terminal is OutcomeKind.AGREEMENT
    assert state.acceptor is Role.SELLER
    assert state.agreed == PARTIAL_DEAL


def test_accept_without_offer_is_illegal():
    with pytest.raises(IllegalActionError):
        apply_action(initial_state(), Accept())


def test_accepting_own_offer_is_illegal():
    state = replay([Submit(PARTIAL_DEAL), Message("Well?")])
    with pytest.raises(IllegalActionError):
        apply_action(state, Accept())


def test_reject_clears_the_offer():
    state = replay([Submit(PARTIAL_DEAL), Reject()])

    assert state.standing_offer is None
    assert not state.is_terminal
    with pytest.raises(IllegalActionError):
        apply_action(state, Accept())


def test_new_submission_replaces_standing_offer():
    state = replay([Submit(PARTIAL_DEAL), Submit(BUYER_WORST), Accept()])
    assert state.agreed == BUYER_WORST
    assert state.acceptor is Role.BUYER


def test_round_cap_ends_without_agreement():
    state = replay([Message("...")] * 49)
    assert not state.is_terminal

    state = apply_action(state, Message("..."))
    assert state.terminal is OutcomeKind.NO_AGREEMENT
    assert state.rounds_completed == 25


def test_actions_after_termination_raise():
    state = replay([WalkAway()])
    with pytest.raises(TerminalStateError):
        apply_action(state, Message("wait"))


def test_seller_can_open():
    state = replay([Message("Hello.")], opener=Role.SELLER)
    assert state.history[0].role is Role.SELLER
    assert state.to_move is Role.BUYER


def test_score_example():
    assert score(PARTIAL_DEAL, BUYER_WEIGHTS, Role.BUYER) == pytest.approx(70.0)


@pytest.mark.parametrize("weights", [BUYER_WEIGHTS, EQUAL_WEIGHTS])
def test_score_extremes(weights):
    assert score(BUYER_BEST, weights, Role.BUYER) == pytest.approx(100.0)
    assert score(BUYER_WORST, weights, Role.BUYER) == pytest.approx(0.0)
    assert score(BUYER_WORST, weights, Role.SELLER) == pytest.approx(100.0)


SKEWED_WEIGHTS = ImportanceWeights({Issue.REF: 5, Issue.SNR: 10, Issue.BNR: 15, Issue.SAP: 30, Issue.BAP: 40})


def deal(ref: str, snr: str, bnr: str, sap: str, bap: str) -> IssueAllocation:
    return IssueAllocation(ref=ref, snr=snr, bnr=bnr, sap=sap, bap=bap)


@pytest.mark.parametrize(
    ("allocation", "weights", "role", "expected"),
    [
        (PARTIAL_DEAL, BUYER_WEIGHTS, Role.BUYER, 70.0),
        (PARTIAL_DEAL, EQUAL_WEIGHTS, Role.SELLER, 30.0),
        (BUYER_BEST, BUYER_WEIGHTS, Role.BUYER, 100.0),
        (BUYER_WORST, BUYER_WEIGHTS, Role.BUYER, 0.0),
        (deal("none", "remove", "remove", "apologize", "not-apologize"), BUYER_WEIGHTS, Role.BUYER, 50.0),
        (deal("none", "remove", "remove", "apologize", "not-apologize"), EQUAL_WEIGHTS, Role.SELLER, 40.0),
        (deal("none", "remove", "remove", "apologize", "not-apologize"), EQUAL_WEIGHTS, Role.BUYER, 60.0),
        (deal("full", "keep", "keep", "not-apologize", "not-apologize"), BUYER_WEIGHTS, Role.BUYER, 55.0),
        (deal("full", "keep", "keep", "not-apologize", "not-apologize"), BUYER_WEIGHTS, Role.SELLER, 45.0),
        (deal("partial", "keep", "keep", "apologize", "apologize"), BUYER_WEIGHTS, Role.BUYER, 50.0),
        (deal("partial", "keep", "keep", "apologize", "apologize"), BUYER_WEIGHTS, Role.SELLER, 50.0),
        (deal("partial", "remove", "keep", "not-apologize", "apologize"), EQUAL_WEIGHTS, Role.BUYER, 50.0),
        (deal("none", "keep", "keep", "apologize", "not-apologize"), BUYER_WEIGHTS, Role.BUYER, 35.0),
        (deal("none", "keep", "keep", "apologize", "not-apologize"), BUYER_WEIGHTS, Role.SELLER, 65.0),
        (deal("full", "remove", "remove", "not-apologize", "not-apologize"), EQUAL_WEIGHTS, Role.SELLER, 40.0),
        (deal("full", "remove", "remove", "not-apologize", "not-apologize"), BUYER_WEIGHTS, Role.BUYER, 70.0),
        (BUYER_WORST, BUYER_WEIGHTS, Role.SELLER, 100.0),
        (deal("partial", "keep", "remove", "not-apologize", "apologize"), BUYER_WEIGHTS, Role.BUYER, 20.0),
        (deal("partial", "keep", "remove", "not-apologize", "apologize"), EQUAL_WEIGHTS, Role.SELLER, 90.0),
        (deal("partial", "remove", "keep", "apologize", "not-apologize"), SKEWED_WEIGHTS, Role.BUYER, 97.5),
    ],
)
def test_score_table(allocation, weights, role, expected):
    assert score(allocation, weights, role) == pytest.approx(expected, abs=1e-12)


def test_favorable_flips_never_lower_the_score(rng):
    deals = all_allocations()
    for _ in range(10_000):
        allocation = deals[rng.integers(len(deals))]
        weights = ImportanceWeights.normalized(dict(zip(ISSUES, rng.dirichlet(np.ones(5)) * 100, strict=True)))
        role = Role.BUYER if rng.random() < 0.5 else Role.SELLER
        issue = ISSUES[rng.integers(len(ISSUES))]
        credits = CREDIT[role][issue]
        better = [level for level in credits if credits[level] > credits[allocation[issue]]]
        if not better:
            continue
        flipped = replace(allocation, **{issue.value.lower(): better[rng.integers(len(better))]})

        assert score(flipped, weights, role) >= score(allocation, weights, role)


EXAMPLE_DIALOGUE = [
    "I need you to remove your false review about me and apologize for misleading others about the jersey.",
    "I won't remove my truthful review when you're the one who lied calling me a \"LIAR AND A CROOK\" "
    "- the listing clearly stated it wasn't for a specific player.",
    "Your listing specifically mentioned Kobe Bryant and you changed it later "
    "- I'll reconsider my review if you remove yours and offer a public apology.",
    "Never mentioned Kobe in my listing - check your screenshots if you have any proof.",
    "I saw the Kobe reference before you changed it, but I'm willing to meet halfway "
    "- remove your harmful review about me and apologize, and we can discuss my review separately.",
    "I'll consider removing my review if you take down your false review "
    "and apologize for calling me a liar and crook.",
    "I need your apology more than anything since you've damaged my reputation, "
    "but I'm willing to adjust my review if you remove yours first.",
    "Look, I care about receiving an apology from you "
    "- your false claims damaged my business reputation far more than my review hurt you.",
    "I understand reputations matter to both of us "
    "- how about we both remove our reviews and you apologize for the misrepresentation about the jersey?",
    "I'll apologize if you remove your review and apologize for falsely calling me a liar "
    "- the jersey was never misrepresented.",
    "Your apology is most important to me - if you sincerely apologize and remove your review, "
    "I'll consider adjusting my review without asking for a refund.",
    "Since you're dropping the refund demand, I'll apologize but I need you to remove your review completely "
    "- that's my priority.",
    "I'll agree to remove my review if you apologize sincerely and remove your false review about me "
    "- that seems fair for both of us.",
    EXAMPLE_SUBMISSION,
    "ACCEPT-DEAL",
]


def test_example_dialogue_replays_to_agreement():
    state = replay([parse_action(text) for text in EXAMPLE_DIALOGUE])
    outcome = outcome_of(state, {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS})

    assert outcome.kind is OutcomeKind.AGREEMENT
    assert outcome.acceptor is Role.BUYER
    assert outcome.allocation == deal("none", "remove", "remove", "apologize", "not-apologize")
    assert outcome.allocation.to_record() == {
        "REF": "none",
        "SNR": "remove",
        "BNR": "remove",
        "SAP": "apologize",
        "BAP": "not-apologize",
    }
    assert outcome.scores == {Role.BUYER: pytest.approx(50.0), Role.SELLER: pytest.approx(40.0)}


def test_score_requires_normalized_weights():
    raw = ImportanceWeights({issue: 10.0 for issue in ISSUES})
    with pytest.raises(WeightsNotNormalizedError):
        score(PARTIAL_DEAL, raw, Role.BUYER)


def test_normalized_equal_weights():
    weights = ImportanceWeights.normalized({issue: 7.0 for issue in ISSUES})
    assert all(weights[issue] == pytest.approx(20.0) for issue in ISSUES)
    assert weights.is_normalized()


def test_normalized_applies_floor():
    raw = {Issue.REF: -5.0, Issue.SNR: 30.0, Issue.BNR: 30.0, Issue.SAP: 30.0, Issue.BAP: 9.0}
    weights = ImportanceWeights.normalized(raw, floor=1.0)
    assert weights[Issue.REF] == pytest.approx(1.0)
    assert weights.total == pytest.approx(100.0)


def test_outcome_of_agreement_scores_both_parties():
    state = replay([Submit(PARTIAL_DEAL), Accept()])
    outcome = outcome_of(state, {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS})

    assert outcome.kind is OutcomeKind.AGREEMENT
    assert outcome.score_of(Role.BUYER) == pytest.approx(70.0)
    assert outcome.score_of(Role.SELLER) == pytest.approx(30.0)
    assert (outcome.accept(Role.BUYER), outcome.accept(Role.SELLER)) == (0, 1)


def test_outcome_of_walk_away():
    state = replay([WalkAway()])
    outcome = outcome_of(state, {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS})

    assert outcome.walker is Role.BUYER
    assert outcome.not_walk_away(Role.BUYER) == 0
    assert outcome.not_walk_away(Role.SELLER) == 1
    assert outcome.scores is None


def test_outcome_of_round_cap():
    state = replay([Message("...")] * 4, max_rounds=2)
    outcome = outcome_of(state, {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS})

    assert outcome.kind is OutcomeKind.NO_AGREEMENT
    assert (outcome.accept(Role.BUYER), outcome.accept(Role.SELLER)) == (0, 0)
    assert outcome.score_of(Role.BUYER) is None


def test_outcome_of_live_negotiation_raises():
    with pytest.raises(TerminalStateError):
        outcome_of(initial_state(), {Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS})


def test_agreement_outcome_needs_scores():
    with pytest.raises(ValueError):
        Outcome(OutcomeKind.AGREEMENT, acceptor=Role.SELLER, allocation=PARTIAL_DEAL)


def test_outcome_record_keeps_walker():
    outcome = Outcome(OutcomeKind.WALK_AWAY, walker=Role.SELLER)
    assert Outcome.from_record(outcome.to_record()) == outcome
