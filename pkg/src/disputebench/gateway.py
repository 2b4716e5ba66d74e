"""Chat-completion providers, the retrying client, and deterministic scripted negotiators."""

import asyncio
import os
from collections.abc import Awaitable, Callable
from dataclasses import dataclass, field, replace
from enum import Enum

import httpx
import numpy as np
from rich.console import Console
from rich.markup import escape

from disputebench.annotate import classify_segment, segment_turn_text
from disputebench.corpus import (
    CATEGORY_MEMBERS,
    IrpCategory,
    IrpStrategy,
    PersonalityProfile,
    Trait,
    TraitScale,
    category_of,
)
from disputebench.negotiation import (
    ACCEPT_TOKEN,
    ISSUES,
    WALK_AWAY_TOKEN,
    ImportanceWeights,
    IssueAllocation,
    NegotiationState,
    Role,
    TerminalStateError,
    all_allocations,
    score,
)
from disputebench.persona import map_human_to_level

console = Console()

ChatMessage = tuple[str, str]


class GatewayError(Exception):
    """Base class for provider failures."""

    retryable = False


class AuthenticationError(GatewayError):
    pass


class RateLimitError(GatewayError):
    retryable = True


class TransientProviderError(GatewayError):
    retryable = True


class ProviderTimeoutError(GatewayError):
    retryable = True


class MalformedResponseError(GatewayError):
    pass


class ProviderRequestError(GatewayError):
    """A 4xx rejection other than auth or rate limiting."""


# Providers

class ChatProvider:
    """Maps chat messages to one provider's wire format."""

    name = ""
    default_endpoint = ""

    def headers(self, api_key: str) -> dict[str, str]:
        return {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}

    def payload(self, config: "ProviderConfig", messages: list[ChatMessage]) -> dict:
        body: dict = {
            "model": config.model,
            "messages": [{"role": role, "content": text} for role, text in messages],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        if config.top_p is not None:
            body["top_p"] = config.top_p
        return body

    def parse_response(self, data: dict) -> tuple[str, str | None]:
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedResponseError(f"{self.name} response has no message content") from e
        if not isinstance(content, str):
            raise MalformedResponseError(f"{self.name} message content is not text")
        return content, data.get("id")


class OpenAIProvider(ChatProvider):
    name = "openai"
    default_endpoint = "https://api.openai.com/v1/chat/completions"


class OpenRouterProvider(ChatProvider):
    name = "openrouter"
    default_endpoint = "https://openrouter.ai/api/v1/chat/completions"


class AnthropicProvider(ChatProvider):
    name = "anthropic"
    default_endpoint = "https://api.anthropic.com/v1/messages"
    api_version = "2023-06-01"

    def headers(self, api_key: str) -> dict[str, str]:
        return {
            "x-api-key": api_key,
            "anthropic-version": self.api_version,
            "Content-Type": "application/json",
        }

    def payload(self, config: "ProviderConfig", messages: list[ChatMessage]) -> dict:
        system = "\n\n".join(text for role, text in messages if role == "system")
        body: dict = {
            "model": config.model,
            "max_tokens": config.max_tokens,
            "temperature": config.temperature,
            "messages": [
                {"role": role, "content": text} for role, text in messages if role != "system"
            ],
        }
        if system:
            body["system"] = system
        if config.top_p is not None:
            body["top_p"] = config.top_p
        return body

    def parse_response(self, data: dict) -> tuple[str, str | None]:
        try:
            blocks = data["content"]
            text = "".join(b["text"] for b in blocks if b.get("type") == "text")
        except (KeyError, TypeError) as e:
            raise MalformedResponseError("anthropic response has no content blocks") from e
        if not blocks:
            raise MalformedResponseError("anthropic response has empty content")
        return text, data.get("id")


PROVIDERS: dict[str, ChatProvider] = {
    p.name: p for p in (OpenAIProvider(), OpenRouterProvider(), AnthropicProvider())
}


def get_provider(name: str) -> ChatProvider:
    try:
        return PROVIDERS[name]
    except KeyError:
        raise ValueError(f"unknown provider {name!r}; choose from {sorted(PROVIDERS)}") from None


@dataclass
class ProviderConfig:
    """Configuration for one chat-completion model."""

    provider: str = "openai"
    model: str = "gpt-4o"
    endpoint: str | None = None
    api_key_env: str | None = None
    temperature: float = 1.0
    top_p: float | None = None
    max_tokens: int = 1024
    max_retries: int = 3
    timeout: float = 60.0
    initial_backoff: float = 1.0
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        get_provider(self.provider)

    @property
    def url(self) -> str:
        return self.endpoint or get_provider(self.provider).default_endpoint

    @property
    def credential_env(self) -> str:
        if self.api_key_env:
            return self.api_key_env
        return f"DISPUTEBENCH_{self.provider.upper().replace('-', '_')}_KEY"

    def to_record(self) -> dict:
        return {
            "provider": self.provider,
            "model": self.model,
            "endpoint": self.url,
            "api_key_env": self.credential_env,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
            "initial_backoff": self.initial_backoff,
        }


def resolve_credential(config: ProviderConfig) -> str:
    key = os.environ.get(config.credential_env, "").strip()
    if not key:
        raise AuthenticationError(f"credential {config.credential_env} is not set")
    return key


@dataclass
class GatewayStats:
    """Statistics for provider calls."""

    attempts: int = 0
    completed: int = 0
    retries: int = 0
    failed: int = 0
    request_ids: list[str] = field(default_factory=list)


class ChatClient:
    """Async chat-completion client with exponential backoff on transient failures."""

    def __init__(
        self,
        config: ProviderConfig,
        transport: httpx.AsyncBaseTransport | None = None,
        sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
        api_key: str | None = None,
    ):
        self.config = config
        self.provider = get_provider(config.provider)
        self.api_key = api_key if api_key is not None else resolve_credential(config)
        self.stats = GatewayStats()
        self._sleep = sleep
        self._client = httpx.AsyncClient(timeout=config.timeout, transport=transport)

    async def __aenter__(self) -> "ChatClient":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        await self._client.aclose()

    @property
    def label(self) -> str:
        return f"{self.config.provider}:{self.config.model}"

    async def complete(self, messages: list[ChatMessage]) -> str:
        """Return the reply text, retrying rate limits, 5xx and timeouts up to max_retries times."""
        headers = self.provider.headers(self.api_key)
        body = self.provider.payload(self.config, messages)
        delay = self.config.initial_backoff
        last_error: GatewayError | None = None

        for attempt in range(self.config.max_retries + 1):
            self.stats.attempts += 1
            try:
                resp = await self._client.post(self.config.url, headers=headers, json=body)
                resp.raise_for_status()
            except httpx.HTTPStatusError as exc:
                status = exc.response.status_code
                if status in (401, 403):
                    self.stats.failed += 1
                    raise AuthenticationError(f"{self.label} rejected the credential (HTTP {status})") from exc
                if status == 429:
                    last_error = RateLimitError(f"{self.label} rate limited")
                    retry_after = exc.response.headers.get("retry-after", "")
                    if retry_after.isdigit():
                        delay = max(delay, float(retry_after))
                elif status >= 500:
                    last_error = TransientProviderError(f"{self.label} HTTP {status}")
                else:
                    self.stats.failed += 1
                    raise ProviderRequestError(f"{self.label} HTTP {status}") from exc
            except httpx.TimeoutException:
                last_error = ProviderTimeoutError(f"{self.label} timed out after {self.config.timeout}s")
            except httpx.TransportError as exc:
                last_error = TransientProviderError(f"{self.label} transport error: {exc}")
            else:
                return self._read_reply(resp)

            if attempt < self.config.max_retries:
                self.stats.retries += 1
                if self.config.verbose:
                    console.print(f"  [yellow]{escape(str(last_error))}, retrying in {delay:g}s...[/yellow]")
                await self._sleep(delay)
                delay *= 2

        self.stats.failed += 1
        assert last_error is not None
        raise last_error

    def _read_reply(self, resp: httpx.Response) -> str:
        try:
            data = resp.json()
        except ValueError as e:
            self.stats.failed += 1
            raise MalformedResponseError(f"{self.label} returned non-JSON body") from e
        try:
            text, response_id = self.provider.parse_response(data)
        except MalformedResponseError:
            self.stats.failed += 1
            raise
        request_id = resp.headers.get("x-request-id") or resp.headers.get("request-id")
        self.stats.completed += 1
        for ident in (request_id, response_id):
            if ident:
                self.stats.request_ids.append(ident)
        if self.config.verbose:
            console.print(f"  [dim]{self.label} request={request_id} response={response_id}[/dim]")
        return text


async def complete(
    config: ProviderConfig,
    messages: list[ChatMessage],
    transport: httpx.AsyncBaseTransport | None = None,
) -> str:
    async with ChatClient(config, transport=transport) as client:
        return await client.complete(messages)


# Scripted negotiators

class PolicyKind(str, Enum):
    MESSAGE_ONLY = "message-only"
    ACCEPT_ANY = "accept-any"
    WALK_AT_ROUND = "walk-at-round"
    OPEN_OFFER = "open-offer"
    CONCESSION = "concession"


CANNED_TEXT: dict[IrpStrategy, tuple[str, ...]] = {
    IrpStrategy.PROPOSAL: (
        "How about we settle on a partial refund for the jersey?",
        "What if we both drop the negative reviews?",
        "I can offer a solution that covers the main issues.",
    ),
    IrpStrategy.CONCESSION: (
        "Okay fine, I am willing to move on the refund.",
        "You are right, I can live with removing my review.",
        "I changed my mind about the apology.",
    ),
    IrpStrategy.INTERESTS: (
        "I need this resolved because it matters a lot to me.",
        "I really care about how this turns out.",
        "My reputation is important to me.",
    ),
    IrpStrategy.POSITIVE_EXPECTATIONS: (
        "I am sure we can work this out.",
        "We both want this to end well.",
        "You and I can find common ground here.",
    ),
    IrpStrategy.FACTS: (
        "The jersey arrived in the wrong size.",
        "The order was shipped on time.",
        "The package was delivered last week.",
    ),
    IrpStrategy.PROCEDURAL: (
        "Let's go through the issues one at a time.",
        "Can we discuss the refund first?",
        "Hello, let's talk about what happened.",
    ),
    IrpStrategy.POWER: (
        "You will regret this if you keep refusing.",
        "This whole thing feels like a scam to me.",
        "I will post a negative review everywhere.",
    ),
    IrpStrategy.RIGHTS: (
        "According to the policy, refunds are not possible after delivery.",
        "I am entitled to a full refund for a defective product.",
        "It is only fair that you take responsibility.",
    ),
    IrpStrategy.RESIDUAL: (
        "Thank you for your time.",
        "I am sorry about the trouble.",
        "Okay.",
    ),
}

ACCEPT_TEXT = "Thank you, we have a deal."
WALK_AWAY_TEXT = "I am sorry, I cannot continue this conversation."


def _pool(category: IrpCategory) -> list[IrpStrategy]:
    return [s for s in IrpStrategy if s in CATEGORY_MEMBERS[category]]


_COOPERATIVE_TALK = [s for s in _pool(IrpCategory.COOPERATIVE) if s is not IrpStrategy.PROPOSAL]
_COMPETITIVE_TALK = _pool(IrpCategory.COMPETITIVE)
_NEUTRAL_TALK = _pool(IrpCategory.NEUTRAL) + [IrpStrategy.RESIDUAL]


@dataclass(frozen=True)
class ScriptedPolicy:
    """A deterministic negotiator: (round, standing offer, opponent's last category) -> action + text."""

    kind: PolicyKind = PolicyKind.CONCESSION
    role: Role | None = None
    weights: ImportanceWeights | None = None
    walk_round: int = 3
    cooperativeness: float = 0.5
    initial_aspiration: float = 100.0
    reservation: float = 40.0
    decay: float = 0.15
    walk_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.role is not None:
            object.__setattr__(self, "role", Role(self.role))
        if not 0.0 <= self.cooperativeness <= 1.0:
            raise ValueError("cooperativeness must lie in [0, 1]")
        if not 0.0 <= self.walk_probability <= 1.0:
            raise ValueError("walk_probability must lie in [0, 1]")
        if not 0.0 <= self.reservation <= self.initial_aspiration <= 100.0:
            raise ValueError("need 0 <= reservation <= initial_aspiration <= 100")
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        if self.walk_round < 1:
            raise ValueError("walk_round must be at least 1")

    @classmethod
    def from_profile(
        cls,
        kind: PolicyKind,
        role: Role,
        weights: ImportanceWeights,
        profile: PersonalityProfile,
        seed: int,
        **overrides,
    ) -> "ScriptedPolicy":
        """Agreeable agents cooperate and concede more; neurotic agents walk out under pressure."""
        if profile.scale is TraitScale.SIX_POINT:
            agr = profile.level(Trait.AGR).value
            neu = profile.level(Trait.NEU).value
        else:
            agr = map_human_to_level(profile[Trait.AGR]).value
            neu = map_human_to_level(profile[Trait.NEU]).value
        params = {
            "cooperativeness": (agr + 3) / 6.0,
            "reservation": 45.0 - 5.0 * agr,
            "walk_probability": 0.03 * max(neu, 0),
        }
        params.update(overrides)
        return cls(kind=kind, role=role, weights=weights, seed=seed, **params)

    def aspiration(self, round_number: int) -> float:
        gap = self.initial_aspiration - self.reservation
        return self.reservation + gap * (1.0 - self.decay) ** (round_number - 1)

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "walk_round": self.walk_round,
            "cooperativeness": self.cooperativeness,
            "initial_aspiration": self.initial_aspiration,
            "reservation": self.reservation,
            "decay": self.decay,
            "walk_probability": self.walk_probability,
            "seed": self.seed,
        }


def last_partner_category(state: NegotiationState, role: Role) -> IrpCategory | None:
    """Competitive if any segment of the partner's latest turn is; else the first other category found."""
    for move in reversed(state.history):
        if move.role is role.partner:
            categories = {category_of(classify_segment(s.text)) for s in segment_turn_text(move.text)}
            for category in (
                IrpCategory.COMPETITIVE,
                IrpCategory.COOPERATIVE,
                IrpCategory.NEUTRAL,
                IrpCategory.RESIDUAL,
            ):
                if category in categories:
                    return category
            return None
    return None


def _talk(policy: ScriptedPolicy, last: IrpCategory | None, rng: np.random.Generator) -> str:
    p_comp = (1.0 - policy.cooperativeness) * (0.6 if last is IrpCategory.COMPETITIVE else 0.3)
    p_coop = policy.cooperativeness * 0.7
    draw = rng.random()
    if draw < p_comp:
        pool = _COMPETITIVE_TALK
    elif draw < p_comp + p_coop:
        pool = _COOPERATIVE_TALK
    else:
        pool = _NEUTRAL_TALK
    return _canned(pool[int(rng.integers(len(pool)))], rng)


def _canned(strategy: IrpStrategy, rng: np.random.Generator) -> str:
    options = CANNED_TEXT[strategy]
    return options[int(rng.integers(len(options)))]


def _best_for(role: Role, weights: ImportanceWeights | None) -> IssueAllocation:
    weights = weights or ImportanceWeights({issue: 20.0 for issue in ISSUES})
    return max(all_allocations(), key=lambda a: score(a, weights, role))


def _target_offer(policy: ScriptedPolicy, role: Role, aspiration: float) -> IssueAllocation:
    """The most generous deal that still meets the aspiration level."""
    scored = [(score(a, policy.weights, role), a) for a in all_allocations()]
    feasible = [(s, a) for s, a in scored if s >= aspiration - 1e-9]
    if not feasible:
        return max(scored, key=lambda item: item[0])[1]
    return min(feasible, key=lambda item: item[0])[1]


def scripted_agent_respond(policy: ScriptedPolicy, state: NegotiationState) -> str:
    """Deterministic reply text whose parsed action is the policy's decision."""
    if state.is_terminal:
        raise TerminalStateError("negotiation already ended")
    role = state.to_move
    if policy.role is not None and policy.role is not role:
        raise ValueError(f"policy plays {policy.role.value} but {role.value} is to move")

    rng = np.random.default_rng([policy.seed, 0 if role is Role.BUYER else 1, len(state.history)])
    last = last_partner_category(state, role)
    partner_offer = state.standing_offer if state.offer_by is role.partner else None
    own_offer = state.standing_offer if state.offer_by is role else None
    round_number = state.current_round

    match policy.kind:
        case PolicyKind.MESSAGE_ONLY:
            return _talk(policy, last, rng)
        case PolicyKind.ACCEPT_ANY:
            if partner_offer is not None:
                return f"{ACCEPT_TEXT}\n{ACCEPT_TOKEN}"
            return _talk(policy, last, rng)
        case PolicyKind.WALK_AT_ROUND:
            if round_number >= policy.walk_round:
                return WALK_AWAY_TOKEN
            return _talk(policy, last, rng)
        case PolicyKind.OPEN_OFFER:
            if partner_offer is not None:
                return f"{ACCEPT_TEXT}\n{ACCEPT_TOKEN}"
            if own_offer is None:
                offer = _best_for(role, policy.weights)
                return f"{_canned(IrpStrategy.PROPOSAL, rng)}\n{offer.to_submission()}"
            return _talk(policy, last, rng)

    if policy.weights is None:
        raise ValueError("the concession policy needs importance weights")
    if last is IrpCategory.COMPETITIVE and rng.random() < policy.walk_probability:
        return f"{WALK_AWAY_TEXT}\n{WALK_AWAY_TOKEN}"

    aspiration = policy.aspiration(round_number)
    if partner_offer is not None:
        own_value = score(partner_offer, policy.weights, role)
        final_round = round_number >= state.max_rounds
        if own_value >= aspiration - 1e-9 or (final_round and own_value >= policy.reservation):
            return f"{ACCEPT_TEXT}\n{ACCEPT_TOKEN}"

    target = _target_offer(policy, role, aspiration)
    if target == own_offer:
        return _talk(policy, last, rng)
    conceding = own_offer is not None and score(target, policy.weights, role) < score(
        own_offer, policy.weights, role
    )
    strategy = IrpStrategy.CONCESSION if conceding else IrpStrategy.PROPOSAL
    return f"{_canned(strategy, rng)}\n{target.to_submission()}"


def bind_policy(policy: ScriptedPolicy, role: Role, weights: ImportanceWeights) -> ScriptedPolicy:
    """Fill in the seat and importance weights a policy plays with."""
    return replace(policy, role=role, weights=policy.weights or weights)
