"""Dispute-resolution state machine: action grammar, transitions, termination and payoffs."""

import itertools
import json
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum

MAX_ROUNDS = 25

SUBMISSION_TOKEN = "SUBMISSION:"
ACCEPT_TOKEN = "ACCEPT-DEAL"
REJECT_TOKEN = "REJECT-DEAL"
WALK_AWAY_TOKEN = "WALK-AWAY"


class NegotiationError(Exception):
    """Base class for negotiation failures."""


class MalformedOfferError(NegotiationError, ValueError):
    """A SUBMISSION line whose object does not assign exactly the five issues."""


class IllegalActionError(NegotiationError, ValueError):
    """An action the acting party may not take in the current state."""


class TerminalStateError(IllegalActionError):
    """An action applied to, or a non-terminal query of, a finished negotiation."""


class WeightsNotNormalizedError(NegotiationError, ValueError):
    """Importance weights that do not sum to 100."""


class Role(str, Enum):
    BUYER = "Buyer"
    SELLER = "Seller"

    @property
    def partner(self) -> "Role":
        return Role.SELLER if self is Role.BUYER else Role.BUYER


class Issue(str, Enum):
    REF = "REF"
    SNR = "SNR"
    BNR = "BNR"
    SAP = "SAP"
    BAP = "BAP"


ISSUES: tuple[Issue, ...] = tuple(Issue)

ISSUE_NAMES = {
    Issue.REF: "Refund",
    Issue.SNR: "Seller Negative Review",
    Issue.BNR: "Buyer Negative Review",
    Issue.SAP: "Seller Apology",
    Issue.BAP: "Buyer Apology",
}


class RefundLevel(str, Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


class ReviewLevel(str, Enum):
    REMOVE = "remove"
    KEEP = "keep"


class ApologyLevel(str, Enum):
    APOLOGIZE = "apologize"
    NOT_APOLOGIZE = "not-apologize"


ISSUE_LEVELS: dict[Issue, type[Enum]] = {
    Issue.REF: RefundLevel,
    Issue.SNR: ReviewLevel,
    Issue.BNR: ReviewLevel,
    Issue.SAP: ApologyLevel,
    Issue.BAP: ApologyLevel,
}


@dataclass(frozen=True)
class IssueAllocation:
    """One value for each of the five disputed issues."""

    ref: RefundLevel
    snr: ReviewLevel
    bnr: ReviewLevel
    sap: ApologyLevel
    bap: ApologyLevel

    def __post_init__(self) -> None:
        for issue in ISSUES:
            level_type = ISSUE_LEVELS[issue]
            value = getattr(self, issue.value.lower())
            if not isinstance(value, level_type):
                object.__setattr__(self, issue.value.lower(), level_type(value))

    def __getitem__(self, issue: Issue) -> Enum:
        return getattr(self, Issue(issue).value.lower())

    def to_record(self) -> dict[str, str]:
        return {issue.value: self[issue].value for issue in ISSUES}

    @classmethod
    def from_record(cls, record: dict[str, str]) -> "IssueAllocation":
        keys = set(record)
        expected = {issue.value for issue in ISSUES}
        if keys != expected:
            raise MalformedOfferError(
                f"allocation must assign exactly {sorted(expected)}, got {sorted(keys)}"
            )
        return cls(**{issue.value.lower(): record[issue.value] for issue in ISSUES})

    def to_submission(self) -> str:
        """Render the allocation as a bit-exact SUBMISSION line."""
        surface = {
            RefundLevel.NONE: "None",
            RefundLevel.PARTIAL: "partial",
            RefundLevel.FULL: "full",
            ReviewLevel.REMOVE: "remove",
            ReviewLevel.KEEP: "not remove",
            ApologyLevel.APOLOGIZE: "apologize",
            ApologyLevel.NOT_APOLOGIZE: "not apologize",
        }
        body = {issue.value: surface[self[issue]] for issue in ISSUES}
        return f"{SUBMISSION_TOKEN} {json.dumps(body)}"


OfferContent = IssueAllocation


def all_allocations() -> list[IssueAllocation]:
    """Every possible deal, in a fixed order."""
    return [
        IssueAllocation(ref, snr, bnr, sap, bap)
        for ref, snr, bnr, sap, bap in itertools.product(
            RefundLevel, ReviewLevel, ReviewLevel, ApologyLevel, ApologyLevel
        )
    ]


@dataclass(frozen=True)
class ImportanceWeights:
    """Per-issue importance for one party; normalized weights sum to 100."""

    weights: dict[Issue, float]

    def __post_init__(self) -> None:
        weights = {Issue(k): float(v) for k, v in self.weights.items()}
        if set(weights) != set(ISSUES):
            raise ValueError(f"importance weights must cover {[i.value for i in ISSUES]}")
        if any(w < 0 or not math.isfinite(w) for w in weights.values()):
            raise ValueError("importance weights must be finite and nonnegative")
        object.__setattr__(self, "weights", weights)

    def __getitem__(self, issue: Issue) -> float:
        return self.weights[Issue(issue)]

    @property
    def total(self) -> float:
        return math.fsum(self.weights.values())

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return abs(self.total - 100.0) <= tol

    @classmethod
    def normalized(cls, raw: dict[Issue, float], floor: float = 0.0) -> "ImportanceWeights":
        """Clamp raw weights to ``floor`` and rescale them to sum to 100."""
        clamped = {Issue(k): max(float(v), floor) for k, v in raw.items()}
        total = math.fsum(clamped.values())
        if total <= 0:
            raise WeightsNotNormalizedError("raw importance weights sum to zero")
        return cls({issue: 100.0 * w / total for issue, w in clamped.items()})

    def to_record(self) -> dict[str, float]:
        return {issue.value: self.weights[issue] for issue in ISSUES}

    @classmethod
    def from_record(cls, record: dict[str, float]) -> "ImportanceWeights":
        return cls({Issue(k): v for k, v in record.items()})


# Credit earned per issue level. Seller credits mirror the Buyer's.
CREDIT: dict[Role, dict[Issue, dict[Enum, float]]] = {
    Role.BUYER: {
        Issue.REF: {RefundLevel.FULL: 1.0, RefundLevel.PARTIAL: 0.5, RefundLevel.NONE: 0.0},
        Issue.SNR: {ReviewLevel.REMOVE: 1.0, ReviewLevel.KEEP: 0.0},
        Issue.BNR: {ReviewLevel.KEEP: 1.0, ReviewLevel.REMOVE: 0.0},
        Issue.SAP: {ApologyLevel.APOLOGIZE: 1.0, ApologyLevel.NOT_APOLOGIZE: 0.0},
        Issue.BAP: {ApologyLevel.NOT_APOLOGIZE: 1.0, ApologyLevel.APOLOGIZE: 0.0},
    },
    Role.SELLER: {
        Issue.REF: {RefundLevel.NONE: 1.0, RefundLevel.PARTIAL: 0.5, RefundLevel.FULL: 0.0},
        Issue.SNR: {ReviewLevel.KEEP: 1.0, ReviewLevel.REMOVE: 0.0},
        Issue.BNR: {ReviewLevel.REMOVE: 1.0, ReviewLevel.KEEP: 0.0},
        Issue.SAP: {ApologyLevel.NOT_APOLOGIZE: 1.0, ApologyLevel.APOLOGIZE: 0.0},
        Issue.BAP: {ApologyLevel.APOLOGIZE: 1.0, ApologyLevel.NOT_APOLOGIZE: 0.0},
    },
}


def score(allocation: IssueAllocation, weights: ImportanceWeights, role: Role) -> float:
    """Inner product of the role's issue credits with its importance weights."""
    if not weights.is_normalized():
        raise WeightsNotNormalizedError(f"importance weights sum to {weights.total}, not 100")
    credits = CREDIT[Role(role)]
    total = math.fsum(weights[issue] * credits[issue][allocation[issue]] for issue in ISSUES)
    return min(max(total, 0.0), 100.0)


class ActionKind(str, Enum):
    MESSAGE = "message"
    SUBMIT = "submit"
    ACCEPT = "accept"
    REJECT = "reject"
    WALK_AWAY = "walk-away"


@dataclass(frozen=True)
class Message:
    text: str = ""
    kind: ActionKind = field(default=ActionKind.MESSAGE, init=False)


@dataclass(frozen=True)
class Submit:
    offer: IssueAllocation
    kind: ActionKind = field(default=ActionKind.SUBMIT, init=False)


@dataclass(frozen=True)
class Accept:
    kind: ActionKind = field(default=ActionKind.ACCEPT, init=False)


@dataclass(frozen=True)
class Reject:
    kind: ActionKind = field(default=ActionKind.REJECT, init=False)


@dataclass(frozen=True)
class WalkAway:
    kind: ActionKind = field(default=ActionKind.WALK_AWAY, init=False)


Action = Message | Submit | Accept | Reject | WalkAway


def _normalize_refund(value: str) -> RefundLevel:
    text = value.strip().lower()
    if text in ("none", "no", "no refund"):
        return RefundLevel.NONE
    if "partial" in text:
        return RefundLevel.PARTIAL
    if "full" in text:
        return RefundLevel.FULL
    raise MalformedOfferError(f"unknown refund level {value!r}")


def _normalize_review(value: str) -> ReviewLevel:
    text = value.strip().lower()
    if re.search(r"\bnot[\s-]*remove", text) or "keep" in text:
        return ReviewLevel.KEEP
    if "remove" in text:
        return ReviewLevel.REMOVE
    raise MalformedOfferError(f"unknown review level {value!r}")


def _normalize_apology(value: str) -> ApologyLevel:
    text = value.strip().lower()
    if re.search(r"\bnot[\s-]*apologi[sz]e", text) or text in ("no", "no apology"):
        return ApologyLevel.NOT_APOLOGIZE
    if re.search(r"apologi[sz]e", text):
        return ApologyLevel.APOLOGIZE
    raise MalformedOfferError(f"unknown apology level {value!r}")


_NORMALIZERS = {
    Issue.REF: _normalize_refund,
    Issue.SNR: _normalize_review,
    Issue.BNR: _normalize_review,
    Issue.SAP: _normalize_apology,
    Issue.BAP: _normalize_apology,
}


def _parse_submission(body: str) -> Submit:
    try:
        payload, _ = json.JSONDecoder().raw_decode(body.strip())
    except json.JSONDecodeError as e:
        raise MalformedOfferError(f"SUBMISSION body is not a JSON object: {e}") from e
    if not isinstance(payload, dict):
        raise MalformedOfferError("SUBMISSION body is not a JSON object")

    expected = {issue.value for issue in ISSUES}
    missing = expected - set(payload)
    extra = set(payload) - expected
    if missing or extra:
        raise MalformedOfferError(
            f"SUBMISSION must assign exactly the five issues "
            f"(missing={sorted(missing)}, extra={sorted(extra)})"
        )

    levels = {}
    for issue in ISSUES:
        value = payload[issue.value]
        if not isinstance(value, str):
            raise MalformedOfferError(f"{issue.value} value must be a string, got {value!r}")
        levels[issue.value.lower()] = _NORMALIZERS[issue](value)
    return Submit(IssueAllocation(**levels))


def parse_action(text: str) -> Action:
    """Map agent text to an action; the first token line wins, plain text is a Message."""
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith(SUBMISSION_TOKEN):
            return _parse_submission(stripped[len(SUBMISSION_TOKEN) :])
        if stripped == ACCEPT_TOKEN:
            return Accept()
        if stripped == REJECT_TOKEN:
            return Reject()
        if stripped == WALK_AWAY_TOKEN:
            return WalkAway()
    return Message(text)


def strip_action_tokens(text: str) -> str:
    """Drop SUBMISSION and bare action-token lines, keeping the free-text part of a turn."""
    kept = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith(SUBMISSION_TOKEN):
            continue
        if stripped in (ACCEPT_TOKEN, REJECT_TOKEN, WALK_AWAY_TOKEN):
            continue
        kept.append(line)
    return "\n".join(kept).strip()


def render_action(action: Action) -> str:
    """Canonical text for a structured action."""
    match action:
        case Submit(offer=offer):
            return offer.to_submission()
        case Accept():
            return ACCEPT_TOKEN
        case Reject():
            return REJECT_TOKEN
        case WalkAway():
            return WALK_AWAY_TOKEN
        case Message(text=text):
            return text
    raise TypeError(f"not an action: {action!r}")


class OutcomeKind(str, Enum):
    AGREEMENT = "Agreement"
    WALK_AWAY = "WalkAway"
    NO_AGREEMENT = "NoAgreement"


@dataclass(frozen=True)
class Move:
    """One entry of the negotiation history."""

    role: Role
    action: Action
    text: str


@dataclass(frozen=True)
class NegotiationState:
    opener: Role = Role.BUYER
    max_rounds: int = MAX_ROUNDS
    history: tuple[Move, ...] = ()
    standing_offer: IssueAllocation | None = None
    offer_by: Role | None = None
    terminal: OutcomeKind | None = None
    acceptor: Role | None = None
    walker: Role | None = None
    agreed: IssueAllocation | None = None

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")

    @property
    def to_move(self) -> Role:
        return self.opener if len(self.history) % 2 == 0 else self.opener.partner

    @property
    def rounds_completed(self) -> int:
        return len(self.history) // 2

    @property
    def current_round(self) -> int:
        """1-based round of the next move."""
        return len(self.history) // 2 + 1

    @property
    def is_terminal(self) -> bool:
        return self.terminal is not None


def initial_state(opener: Role = Role.BUYER, max_rounds: int = MAX_ROUNDS) -> NegotiationState:
    return NegotiationState(opener=Role(opener), max_rounds=max_rounds)


def apply_action(
    state: NegotiationState, action: Action, text: str | None = None
) -> NegotiationState:
    """Apply the acting party's action and return the successor state."""
    if state.is_terminal:
        raise TerminalStateError(f"negotiation already ended ({state.terminal.value})")

    actor = state.to_move
    move = Move(actor, action, render_action(action) if text is None else text)
    history = state.history + (move,)

    match action:
        case Submit(offer=offer):
            nxt = replace(state, history=history, standing_offer=offer, offer_by=actor)
        case Accept() | Reject() if state.standing_offer is None or state.offer_by is not actor.partner:
            raise IllegalActionError(
                f"{actor.value} cannot {action.kind.value}: no standing offer from {actor.partner.value}"
            )
        case Accept():
            nxt = replace(
                state,
                history=history,
                terminal=OutcomeKind.AGREEMENT,
                acceptor=actor,
                agreed=state.standing_offer,
            )
        case Reject():
            nxt = replace(state, history=history, standing_offer=None, offer_by=None)
        case WalkAway():
            nxt = replace(state, history=history, terminal=OutcomeKind.WALK_AWAY, walker=actor)
        case Message():
            nxt = replace(state, history=history)
        case _:
            raise TypeError(f"not an action: {action!r}")

    if not nxt.is_terminal and len(nxt.history) >= 2 * nxt.max_rounds:
        nxt = replace(nxt, terminal=OutcomeKind.NO_AGREEMENT)
    return nxt


def replay(
    actions: list[Action], opener: Role = Role.BUYER, max_rounds: int = MAX_ROUNDS
) -> NegotiationState:
    state = initial_state(opener, max_rounds)
    for action in actions:
        state = apply_action(state, action)
    return state


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    acceptor: Role | None = None
    walker: Role | None = None
    allocation: IssueAllocation | None = None
    scores: dict[Role, float] | None = None

    def __post_init__(self) -> None:
        if self.kind is OutcomeKind.AGREEMENT:
            if self.acceptor is None or self.allocation is None:
                raise ValueError("an Agreement needs an acceptor and an allocation")
            if self.scores is None or set(self.scores) != set(Role):
                raise ValueError("an Agreement needs scores for both roles")
            if any(not 0.0 <= s <= 100.0 for s in self.scores.values()):
                raise ValueError("scores must lie in [0, 100]")
            if self.walker is not None:
                raise ValueError("an Agreement has no walker")
        else:
            if self.acceptor is not None or self.allocation is not None or self.scores:
                raise ValueError(f"{self.kind.value} carries no acceptor, allocation or scores")
            if (self.kind is OutcomeKind.WALK_AWAY) != (self.walker is not None):
                raise ValueError("exactly the WalkAway outcome names a walker")

    def accept(self, role: Role) -> int:
        return int(self.kind is OutcomeKind.AGREEMENT and self.acceptor is role)

    def not_walk_away(self, role: Role) -> int:
        return int(not (self.kind is OutcomeKind.WALK_AWAY and self.walker is role))

    def score_of(self, role: Role) -> float | None:
        return None if self.scores is None else self.scores[role]

    def to_record(self) -> dict:
        record: dict = {"kind": self.kind.value}
        if self.acceptor is not None:
            record["acceptor"] = self.acceptor.value
        if self.walker is not None:
            record["walker"] = self.walker.value
        if self.allocation is not None:
            record["allocation"] = self.allocation.to_record()
        if self.scores is not None:
            record["scores"] = {role.value: self.scores[role] for role in Role}
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Outcome":
        scores = record.get("scores")
        return cls(
            kind=OutcomeKind(record["kind"]),
            acceptor=Role(record["acceptor"]) if record.get("acceptor") else None,
            walker=Role(record["walker"]) if record.get("walker") else None,
            allocation=(
                IssueAllocation.from_record(record["allocation"])
                if record.get("allocation")
                else None
            ),
            scores={Role(k): float(v) for k, v in scores.items()} if scores else None,
        )


def outcome_of(state: NegotiationState, weights: dict[Role, ImportanceWeights]) -> Outcome:
    """Derive the outcome (and per-party scores for agreements) of a finished negotiation."""
    if not state.is_terminal:
        raise TerminalStateError("negotiation has not ended")
    if state.terminal is OutcomeKind.AGREEMENT:
        return Outcome(
            kind=OutcomeKind.AGREEMENT,
            acceptor=state.acceptor,
            allocation=state.agreed,
            scores={role: score(state.agreed, weights[role], role) for role in Role},
        )
    if state.terminal is OutcomeKind.WALK_AWAY:
        return Outcome(kind=OutcomeKind.WALK_AWAY, walker=state.walker)
    return Outcome(kind=OutcomeKind.NO_AGREEMENT)
