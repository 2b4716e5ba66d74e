"""Simulation driver: runs persona-conditioned negotiations between model or scripted agents."""

import asyncio
import json
from collections import Counter
from collections.abc import Awaitable, Callable
from dataclasses import dataclass, field, replace
from pathlib import Path

import httpx
import numpy as np
from rich.console import Console
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn

from disputebench.annotate import segment_turn_text
from disputebench.corpus import (
    Dialogue,
    DialogueSource,
    PersonalityProfile,
    Turn,
    append_dialogue,
    read_corpus,
    write_corpus,
)
from disputebench.gateway import (
    ChatClient,
    ChatMessage,
    GatewayError,
    PolicyKind,
    ProviderConfig,
    ScriptedPolicy,
    bind_policy,
    resolve_credential,
    scripted_agent_respond,
)
from disputebench.negotiation import (
    MAX_ROUNDS,
    Action,
    IllegalActionError,
    ImportanceWeights,
    MalformedOfferError,
    Message,
    NegotiationState,
    Role,
    apply_action,
    initial_state,
    outcome_of,
    parse_action,
)
from disputebench.persona import (
    AdjectiveLexicon,
    TraitDistribution,
    assign_importance,
    build_persona_prompt,
    sample_profile,
)
from disputebench.prompts import (
    DEFAULT_SCENARIOS,
    build_messages,
    build_system_prompt,
    malformed_offer_note,
)

console = Console()

AgentSpec = ProviderConfig | ScriptedPolicy


class SimulationError(Exception):
    """Base class for simulation failures."""


class DialogueAbortedError(SimulationError):
    """A provider failed after retries; carries the resumable checkpoint."""

    def __init__(self, checkpoint: "Checkpoint"):
        self.checkpoint = checkpoint
        super().__init__(f"{checkpoint.dialogue_id}: {checkpoint.error}")


@dataclass
class SimulationConfig:
    """Everything that determines one simulated dialogue."""

    dialogue_id: str
    agents: dict[Role, AgentSpec]
    profiles: dict[Role, PersonalityProfile]
    importance: dict[Role, ImportanceWeights]
    scenarios: dict[Role, str] = field(default_factory=lambda: dict(DEFAULT_SCENARIOS))
    max_rounds: int = MAX_ROUNDS
    opener: Role = Role.BUYER
    seed: int = 0
    persona_seeds: dict[Role, int] = field(default_factory=dict)
    lexicon: AdjectiveLexicon | None = None
    replay_texts: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("agents", "profiles", "importance", "scenarios"):
            if set(getattr(self, name)) != set(Role):
                raise ValueError(f"{self.dialogue_id}: {name} must configure both Buyer and Seller")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        self.opener = Role(self.opener)
        for offset, role in enumerate(Role):
            self.persona_seeds.setdefault(role, self.seed * 2 + offset)


@dataclass
class Checkpoint:
    """A partial dialogue plus the provider call that failed."""

    dialogue_id: str
    turn_texts: list[str]
    pending_role: Role
    pending_messages: list[ChatMessage]
    error: str

    def to_record(self) -> dict:
        return {
            "id": self.dialogue_id,
            "turn_texts": self.turn_texts,
            "pending": {
                "role": self.pending_role.value,
                "messages": [list(m) for m in self.pending_messages],
            },
            "error": self.error,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Checkpoint":
        pending = record.get("pending", {})
        return cls(
            dialogue_id=record["id"],
            turn_texts=list(record.get("turn_texts", [])),
            pending_role=Role(pending.get("role", Role.BUYER.value)),
            pending_messages=[tuple(m) for m in pending.get("messages", [])],
            error=record.get("error", ""),
        )


def load_checkpoints(path: str | Path) -> dict[str, Checkpoint]:
    path = Path(path)
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    return {r["id"]: Checkpoint.from_record(r) for r in records}


def write_checkpoints(checkpoints: list[Checkpoint], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for cp in sorted(checkpoints, key=lambda c: c.dialogue_id):
            f.write(json.dumps(cp.to_record(), ensure_ascii=False) + "\n")


def append_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(checkpoint.to_record(), ensure_ascii=False) + "\n")


def resume_plan(
    configs: list[SimulationConfig], output: str | Path, checkpoint_path: str | Path | None = None
) -> tuple[list[Dialogue], list[SimulationConfig], list[str]]:
    """Split a plan into dialogues already in ``output`` and configs still to run.

    Unfinished configs with a checkpoint replay its recorded turn texts. The third item lists
    corpus records that could not be read; those dialogues are simulated again.
    """
    finished: list[Dialogue] = []
    issues: list[str] = []
    if Path(output).exists():
        read = read_corpus(output, max((c.max_rounds for c in configs), default=MAX_ROUNDS))
        planned = {c.dialogue_id for c in configs}
        finished = [d for d in read.dialogues if d.id in planned]
        issues = read.issues
    done = {d.id for d in finished}
    checkpoints = load_checkpoints(checkpoint_path) if checkpoint_path else {}
    remaining = [
        replace(c, replay_texts=tuple(checkpoints[c.dialogue_id].turn_texts))
        if c.dialogue_id in checkpoints
        else c
        for c in configs
        if c.dialogue_id not in done
    ]
    return finished, remaining, issues


@dataclass
class BatchConfig:
    """Configuration for a batch of simulations."""

    parallelism: int = 4
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be positive")


@dataclass
class BatchStats:
    """Statistics for a simulation batch."""

    planned: int = 0
    completed: int = 0
    kept: int = 0
    resumed: int = 0
    failed: int = 0
    reprompts: int = 0
    downgraded: int = 0
    outcomes: Counter = field(default_factory=Counter)


@dataclass
class BatchResult:
    dialogues: list[Dialogue] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)


class _ScriptedAgent:
    def __init__(self, policy: ScriptedPolicy):
        self.policy = policy
        self.label = f"scripted:{policy.kind.value}"

    def messages(self, state: NegotiationState) -> list[ChatMessage]:
        return []

    async def respond(self, state: NegotiationState, retry: tuple[str, str] | None = None) -> str:
        return scripted_agent_respond(self.policy, state)


class _ModelAgent:
    def __init__(self, client: ChatClient, role: Role, system_prompt: str):
        self.client = client
        self.role = role
        self.system_prompt = system_prompt
        self.label = client.label

    def messages(self, state: NegotiationState) -> list[ChatMessage]:
        return build_messages(self.system_prompt, self.role, state)

    async def respond(self, state: NegotiationState, retry: tuple[str, str] | None = None) -> str:
        messages = self.messages(state)
        if retry is not None:
            bad_reply, note = retry
            messages += [("assistant", bad_reply), ("user", note)]
        return await self.client.complete(messages)


def _client_key(config: ProviderConfig) -> str:
    return json.dumps(config.to_record(), sort_keys=True)


class DisputeSimulator:
    """Runs dialogues, bounded by ``parallelism``, sharing one client per provider config."""

    def __init__(
        self,
        config: BatchConfig | None = None,
        transport: httpx.AsyncBaseTransport | None = None,
        sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
    ):
        self.config = config or BatchConfig()
        self.stats = BatchStats()
        self.semaphore = asyncio.Semaphore(self.config.parallelism)
        self._transport = transport
        self._sleep = sleep
        self._clients: dict[str, ChatClient] = {}
        self._write_lock = asyncio.Lock()

    def _client_for(self, provider: ProviderConfig) -> ChatClient:
        key = _client_key(provider)
        if key not in self._clients:
            self._clients[key] = ChatClient(provider, transport=self._transport, sleep=self._sleep)
        return self._clients[key]

    async def aclose(self) -> None:
        for client in self._clients.values():
            await client.aclose()
        self._clients.clear()

    def _prepare(self, config: SimulationConfig) -> tuple[dict, dict, dict]:
        lexicon = config.lexicon or AdjectiveLexicon.default()
        agents, prompts, adjectives = {}, {}, {}
        for role in Role:
            persona = build_persona_prompt(config.profiles[role], lexicon, config.persona_seeds[role])
            adjectives[role.value] = list(persona.adjectives)
            prompts[role.value] = build_system_prompt(
                role, persona, config.scenarios[role], config.importance[role], config.max_rounds
            )
            spec = config.agents[role]
            if isinstance(spec, ScriptedPolicy):
                agents[role] = _ScriptedAgent(bind_policy(spec, role, config.importance[role]))
            else:
                agents[role] = _ModelAgent(self._client_for(spec), role, prompts[role.value])
        return agents, prompts, adjectives

    async def _next_action(
        self, agent, state: NegotiationState, notes: dict
    ) -> tuple[str, Action]:
        text = await agent.respond(state)
        try:
            action = parse_action(text)
        except MalformedOfferError as first:
            self.stats.reprompts += 1
            notes["reprompts"] += 1
            text = await agent.respond(state, retry=(text, malformed_offer_note(first)))
            try:
                action = parse_action(text)
            except MalformedOfferError:
                notes["downgraded"].append(len(state.history))
                action = Message(text)
        return text, action

    async def run_dialogue(self, config: SimulationConfig) -> Dialogue:
        """Alternate the two agents from the opener until the negotiation terminates."""
        agents, prompts, adjectives = self._prepare(config)
        state = initial_state(config.opener, config.max_rounds)
        turns: list[Turn] = []
        texts: list[str] = []
        notes: dict = {"reprompts": 0, "downgraded": []}

        while not state.is_terminal:
            role = state.to_move
            agent = agents[role]
            index = len(state.history)
            if index < len(config.replay_texts):
                text = config.replay_texts[index]
                try:
                    action = parse_action(text)
                except MalformedOfferError:
                    action = Message(text)
            else:
                try:
                    text, action = await self._next_action(agent, state, notes)
                except GatewayError as exc:
                    raise DialogueAbortedError(
                        Checkpoint(config.dialogue_id, texts, role, agent.messages(state), str(exc))
                    ) from exc

            try:
                state = apply_action(state, action, text=text)
            except IllegalActionError:
                notes["downgraded"].append(index)
                action = Message(text)
                state = apply_action(state, action, text=text)
            if isinstance(action, Message):
                action = Message(text)

            texts.append(text)
            turns.append(Turn(index, role, text, action, tuple(segment_turn_text(text))))

        self.stats.downgraded += len(notes["downgraded"])
        outcome = outcome_of(state, config.importance)
        metadata = {
            "seed": config.seed,
            "persona_seeds": {r.value: config.persona_seeds[r] for r in Role},
            "adjectives": adjectives,
            "agents": {
                r.value: (
                    {"policy": config.agents[r].to_record()}
                    if isinstance(config.agents[r], ScriptedPolicy)
                    else {"provider": config.agents[r].to_record()}
                )
                for r in Role
            },
            "opener": config.opener.value,
            "max_rounds": config.max_rounds,
            "prompts": prompts,
            "reprompts": notes["reprompts"],
            "downgraded_turns": notes["downgraded"],
        }
        if config.replay_texts:
            metadata["resumed_turns"] = len(config.replay_texts)
        return Dialogue(
            id=config.dialogue_id,
            turns=tuple(turns),
            outcome=outcome,
            source=DialogueSource.SIMULATED,
            profiles=dict(config.profiles),
            importance=dict(config.importance),
            metadata=metadata,
        )

    async def _run_one(
        self,
        config: SimulationConfig,
        progress: Progress,
        task_id: int,
        output: Path | None,
        checkpoint_path: Path | None,
    ) -> Dialogue | Checkpoint:
        async with self.semaphore:
            try:
                dialogue = await self.run_dialogue(config)
            except DialogueAbortedError as exc:
                self.stats.failed += 1
                if checkpoint_path is not None:
                    async with self._write_lock:
                        append_checkpoint(exc.checkpoint, checkpoint_path)
                if self.config.verbose:
                    console.print(f"  [red]Checkpointed {escape(str(exc))}[/red]")
                return exc.checkpoint
            finally:
                progress.advance(task_id)
            if output is not None:
                async with self._write_lock:
                    append_dialogue(output, dialogue)
            self.stats.completed += 1
            if config.replay_texts:
                self.stats.resumed += 1
            self.stats.outcomes[dialogue.outcome.kind.value] += 1
            if self.config.verbose:
                console.print(
                    f"  [green]Done[/green] {dialogue.id} "
                    f"({dialogue.outcome.kind.value}, {len(dialogue.turns)} turns)"
                )
            return dialogue

    async def run_batch(
        self,
        configs: list[SimulationConfig],
        output: str | Path | None = None,
        checkpoint_path: str | Path | None = None,
        resume: bool = False,
    ) -> BatchResult:
        """Run every config; failures become checkpoints and never stop the batch.

        With ``output``, each dialogue is appended as soon as it finishes and the file is
        rewritten sorted by id once the batch is done. Checkpoints are appended to
        ``checkpoint_path`` the same way. With ``resume``, dialogues already in ``output``
        are kept and checkpointed dialogues replay their recorded turns.
        """
        ids = [c.dialogue_id for c in configs]
        if len(set(ids)) != len(ids):
            raise ValueError("dialogue ids in a batch must be distinct")
        if resume and output is None:
            raise ValueError("resuming a batch needs an output corpus")
        for config in configs:
            for spec in config.agents.values():
                if isinstance(spec, ProviderConfig):
                    resolve_credential(spec)

        output = Path(output) if output is not None else None
        checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None
        result = BatchResult()
        finished: list[Dialogue] = []
        if resume:
            finished, configs, result.issues = resume_plan(configs, output, checkpoint_path)
        else:
            if output is not None:
                write_corpus([], output)
            if checkpoint_path is not None:
                checkpoint_path.unlink(missing_ok=True)
        self.stats.kept += len(finished)
        self.stats.planned += len(configs)

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console,
            disable=not self.config.verbose,
        ) as progress:
            task_id = progress.add_task("Simulating dialogues...", total=len(configs))
            outputs = await asyncio.gather(
                *[self._run_one(c, progress, task_id, output, checkpoint_path) for c in configs]
            )

        result.dialogues = list(finished)
        for item in outputs:
            if isinstance(item, Checkpoint):
                result.checkpoints.append(item)
            else:
                result.dialogues.append(item)
        result.dialogues.sort(key=lambda d: d.id)
        result.checkpoints.sort(key=lambda c: c.dialogue_id)
        if output is not None:
            write_corpus(result.dialogues, output)
        if checkpoint_path is not None:
            if result.checkpoints:
                write_checkpoints(result.checkpoints, checkpoint_path)
            else:
                checkpoint_path.unlink(missing_ok=True)
        return result

    def print_summary(self) -> None:
        failed_str = (
            f"[red]{self.stats.failed}[/red]" if self.stats.failed else str(self.stats.failed)
        )
        outcome_lines = "".join(
            f"\n    {kind:<12} {count}" for kind, count in sorted(self.stats.outcomes.items())
        )
        console.print(
            f"\n[bold]Summary[/bold]\n"
            f"  Planned:     {self.stats.planned}\n"
            f"  Kept:        {self.stats.kept}\n"
            f"  Completed:   [green]{self.stats.completed}[/green]\n"
            f"  Resumed:     {self.stats.resumed}\n"
            f"  Checkpoints: {failed_str}\n"
            f"  Re-prompts:  {self.stats.reprompts}\n"
            f"  Downgraded:  {self.stats.downgraded}\n"
            f"  Outcomes:{outcome_lines}"
        )


async def _simulate_one(config: SimulationConfig, transport) -> Dialogue:
    simulator = DisputeSimulator(transport=transport)
    try:
        return await simulator.run_dialogue(config)
    finally:
        await simulator.aclose()


def run_simulation(
    config: SimulationConfig, transport: httpx.AsyncBaseTransport | None = None
) -> Dialogue:
    return asyncio.run(_simulate_one(config, transport))


async def _simulate_batch(
    configs: list[SimulationConfig],
    batch: BatchConfig,
    transport,
    sleep,
    output: str | Path | None,
    checkpoint_path: str | Path | None,
    resume: bool,
) -> tuple[BatchResult, BatchStats]:
    simulator = DisputeSimulator(batch, transport=transport, sleep=sleep)
    try:
        result = await simulator.run_batch(configs, output, checkpoint_path, resume)
    finally:
        await simulator.aclose()
    return result, simulator.stats


def run_batch(
    configs: list[SimulationConfig],
    parallelism: int = 4,
    output: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    transport: httpx.AsyncBaseTransport | None = None,
    sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
    verbose: bool = False,
    resume: bool = False,
) -> BatchResult:
    """Run a batch, streaming finished dialogues to ``output`` when it is given."""
    result, _ = asyncio.run(
        _simulate_batch(
            configs, BatchConfig(parallelism, verbose), transport, sleep, output, checkpoint_path, resume
        )
    )
    return result


def dialogue_ids(n: int) -> list[str]:
    width = max(4, len(str(max(n - 1, 0))))
    return [f"sim-{i:0{width}d}" for i in range(n)]


def plan_simulations(
    n: int,
    seed: int,
    agents: dict[Role, ProviderConfig | PolicyKind],
    distribution: TraitDistribution | None = None,
    max_rounds: int = MAX_ROUNDS,
    opener: Role = Role.BUYER,
    scenarios: dict[Role, str] | None = None,
    policy_overrides: dict | None = None,
) -> list[SimulationConfig]:
    """Expand one root seed into per-dialogue profiles, weights, persona and policy seeds."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    distribution = distribution or TraitDistribution.default()
    configs = []
    children = np.random.SeedSequence(seed).spawn(n)
    for dialogue_id, child in zip(dialogue_ids(n), children, strict=True):
        seeds = [int(s) for s in child.generate_state(8)]
        profiles, importance, persona_seeds, specs = {}, {}, {}, {}
        for offset, role in enumerate(Role):
            profile = sample_profile(distribution, seeds[offset])
            weights = assign_importance(profile, role, seeds[2 + offset])
            profiles[role] = profile
            importance[role] = weights
            persona_seeds[role] = seeds[4 + offset]
            spec = agents[role]
            if isinstance(spec, ProviderConfig):
                specs[role] = spec
            else:
                specs[role] = ScriptedPolicy.from_profile(
                    PolicyKind(spec),
                    role,
                    weights,
                    profile,
                    seeds[6 + offset],
                    **(policy_overrides or {}),
                )
        configs.append(
            SimulationConfig(
                dialogue_id=dialogue_id,
                agents=specs,
                profiles=profiles,
                importance=importance,
                scenarios=dict(scenarios or DEFAULT_SCENARIOS),
                max_rounds=max_rounds,
                opener=opener,
                seed=seeds[0],
                persona_seeds=persona_seeds,
            )
        )
    return configs
