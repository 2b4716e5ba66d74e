"""Agent prompt construction for simulated dispute negotiations."""

from disputebench.gateway import ChatMessage
from disputebench.negotiation import (
    ACCEPT_TOKEN,
    ISSUE_NAMES,
    ISSUES,
    REJECT_TOKEN,
    SUBMISSION_TOKEN,
    WALK_AWAY_TOKEN,
    ImportanceWeights,
    NegotiationState,
    Role,
)
from disputebench.persona import PersonaPrompt

BUYER_STORY = (
    "You purchased a Kobe Bryant championship jersey for your terminally ill nephew for $75 "
    "from an online store. The jersey arrived late and in the wrong size, and the Seller has "
    "not answered your emails. You left a negative review of the store, and the Seller has "
    "now left a negative review of you as a buyer."
)

SELLER_STORY = (
    "You run a small online store selling sports memorabilia. A Buyer purchased a Kobe Bryant "
    "championship jersey for $75, received it, and then left a negative review accusing your "
    "store of fraud. Your records show the order shipped on time. You responded by leaving a "
    "negative review of the Buyer."
)

DEFAULT_SCENARIOS: dict[Role, str] = {Role.BUYER: BUYER_STORY, Role.SELLER: SELLER_STORY}

ISSUE_OPTIONS = {
    "REF": '"full", "partial" or "None"',
    "SNR": '"remove" or "not remove"',
    "BNR": '"remove" or "not remove"',
    "SAP": '"apologize" or "not apologize"',
    "BAP": '"apologize" or "not apologize"',
}

ACTION_RULES = f"""## Actions
- To propose a deal, put it on its own line exactly as:
  {SUBMISSION_TOKEN} {{"REF": ..., "SNR": ..., "BNR": ..., "SAP": ..., "BAP": ...}}
  assigning every one of the five issues.
- To accept the other party's latest offer, write {ACCEPT_TOKEN} on its own line.
- To reject the other party's latest offer, write {REJECT_TOKEN} on its own line.
- To leave the negotiation without a deal, write {WALK_AWAY_TOKEN} on its own line.
- Anything else you write is an ordinary chat message."""

BEHAVIOR_RULES = """## Strategy & Behavior Rules
- You are encouraged to explore alternative solutions that better reflect your issue priorities.
- Always offer a clear trade-off (at least one compromise or concession) if rejecting an offer.
- If your partner clearly refuses one issue (e.g., "I cannot apologize"), shift your strategy to the other issues.

## Required Multi-Issue Engagement
You must negotiate across at least 3 issues. Do not focus only on a single issue."""

OPENING_CUE = "The conversation is starting. Send your first message."


def render_issues() -> str:
    lines = ["## Issues to resolve"]
    for n, issue in enumerate(ISSUES, start=1):
        lines.append(f"{n}. {ISSUE_NAMES[issue]} ({issue.value}): {ISSUE_OPTIONS[issue.value]}")
    return "\n".join(lines)


def render_importance(weights: ImportanceWeights) -> str:
    lines = [
        "## Issues Importance",
        "This shows how important each issue is to you. The final outcome score is computed as "
        "the inner product of each agreed-upon value and your assigned importance weights.",
    ]
    for issue in ISSUES:
        lines.append(f"- {ISSUE_NAMES[issue]} ({issue.value}): {weights[issue]:.1f}")
    return "\n".join(lines)


def build_system_prompt(
    role: Role,
    persona: PersonaPrompt,
    scenario: str,
    weights: ImportanceWeights,
    max_rounds: int,
    examples: str = "",
) -> str:
    partner = role.partner.value
    sections = [
        f"# Personality\n{persona.text}",
        f"# Story\n{scenario}",
        "# Instructions\n"
        f"You ({role.value}) are now chatting with this {partner}; respond to the dialog history "
        f"through text messages. The conversation ends after {max_rounds} rounds without a deal.",
        render_issues(),
        render_importance(weights),
        BEHAVIOR_RULES,
        ACTION_RULES,
    ]
    if examples:
        sections.append(f"## Sample Dialogue Examples (Reference Only)\n{examples}")
    return "\n\n".join(sections)


def build_messages(system_prompt: str, role: Role, state: NegotiationState) -> list[ChatMessage]:
    """System prompt followed by the history, own turns as assistant and partner turns as user."""
    messages: list[ChatMessage] = [("system", system_prompt)]
    if not state.history or state.history[0].role is role:
        messages.append(("user", OPENING_CUE))
    for move in state.history:
        messages.append(("assistant" if move.role is role else "user", move.text))
    return messages


def malformed_offer_note(error: Exception) -> str:
    return (
        f"Your {SUBMISSION_TOKEN} line could not be read ({error}). Send it again on its own "
        f"line with exactly the keys REF, SNR, BNR, SAP and BAP."
    )
