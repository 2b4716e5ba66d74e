import asyncio
import json
from dataclasses import replace

import httpx
import pytest
from builders import BUYER_WEIGHTS, EQUAL_WEIGHTS, chat_reply, profile

from disputebench.corpus import load_corpus
from disputebench.gateway import AuthenticationError, PolicyKind, ProviderConfig, ScriptedPolicy
from disputebench.negotiation import Accept, Message, OutcomeKind, Role, Submit
from disputebench.simulator import (
    BatchConfig,
    Checkpoint,
    DisputeSimulator,
    SimulationConfig,
    dialogue_ids,
    load_checkpoints,
    plan_simulations,
    run_batch,
    run_simulation,
    write_checkpoints,
)

SCRIPTED = {Role.BUYER: PolicyKind.CONCESSION, Role.SELLER: PolicyKind.CONCESSION}


def make_config(buyer, seller, dialogue_id: str = "sim-x", **kwargs) -> SimulationConfig:
    return SimulationConfig(
        dialogue_id=dialogue_id,
        agents={Role.BUYER: buyer, Role.SELLER: seller},
        profiles={Role.BUYER: profile(1, AGR=2), Role.SELLER: profile(-1, NEU=3)},
        importance={Role.BUYER: BUYER_WEIGHTS, Role.SELLER: EQUAL_WEIGHTS},
        **kwargs,
    )


def model_seat(max_retries: int = 0) -> ProviderConfig:
    return ProviderConfig(provider="openai", model="negotiator", max_retries=max_retries)


def replying(*replies: str) -> tuple[httpx.MockTransport, list[dict]]:
    """Transport answering with ``replies`` in turn, repeating the last one."""
    seen: list[dict] = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(json.loads(request.content))
        return chat_reply(replies[min(len(seen), len(replies)) - 1], f"r{len(seen)}")

    return httpx.MockTransport(handler), seen


def failing_transport(status: int = 503) -> httpx.MockTransport:
    return httpx.MockTransport(lambda request: httpx.Response(status))


def test_open_offers_reach_agreement_in_two_turns():
    config = make_config(ScriptedPolicy(PolicyKind.OPEN_OFFER), ScriptedPolicy(PolicyKind.OPEN_OFFER))
    dialogue = run_simulation(config)

    assert len(dialogue.turns) == 2
    assert isinstance(dialogue.turns[0].action, Submit)
    assert dialogue.turns[1].action == Accept()
    assert dialogue.outcome.kind is OutcomeKind.AGREEMENT
    assert dialogue.outcome.acceptor is Role.SELLER
    assert dialogue.outcome.score_of(Role.BUYER) == pytest.approx(100.0)
    assert dialogue.validate() == []


def test_message_only_agents_hit_the_round_cap():
    config = make_config(ScriptedPolicy(PolicyKind.MESSAGE_ONLY), ScriptedPolicy(PolicyKind.MESSAGE_ONLY))
    dialogue = run_simulation(config)

    assert len(dialogue.turns) == 50
    assert dialogue.outcome.kind is OutcomeKind.NO_AGREEMENT
    assert all(turn.segments for turn in dialogue.turns)
    assert dialogue.validate() == []


def test_seller_can_open_the_dialogue():
    config = make_config(
        ScriptedPolicy(PolicyKind.OPEN_OFFER), ScriptedPolicy(PolicyKind.OPEN_OFFER), opener=Role.SELLER
    )
    dialogue = run_simulation(config)

    assert dialogue.turns[0].speaker is Role.SELLER
    assert dialogue.outcome.acceptor is Role.BUYER
    assert dialogue.metadata["opener"] == "Seller"


def test_scripted_simulation_is_deterministic():
    config = plan_simulations(1, seed=42, agents=SCRIPTED)[0]
    assert run_simulation(config) == run_simulation(config)


def test_metadata_records_personas_and_agents():
    dialogue = run_simulation(plan_simulations(1, seed=5, agents=SCRIPTED)[0])

    assert len(dialogue.metadata["adjectives"]["Buyer"]) == 15
    assert dialogue.metadata["agents"]["Seller"]["policy"]["kind"] == "concession"
    assert "You are a character who is" in dialogue.metadata["prompts"]["Buyer"]


def test_plan_expands_one_seed_deterministically():
    first = plan_simulations(6, seed=9, agents=SCRIPTED)
    second = plan_simulations(6, seed=9, agents=SCRIPTED)

    assert first == second
    assert [c.dialogue_id for c in first] == dialogue_ids(6)
    assert all(c.importance[role].is_normalized() for c in first for role in Role)
    assert plan_simulations(6, seed=10, agents=SCRIPTED) != first


def test_dialogue_ids_are_zero_padded():
    assert dialogue_ids(3) == ["sim-0000", "sim-0001", "sim-0002"]
    assert dialogue_ids(12345)[-1] == "sim-12344"
    assert dialogue_ids(0) == []


def test_parallelism_does_not_change_the_corpus(tmp_path):
    configs = plan_simulations(8, seed=3, agents=SCRIPTED)

    serial = run_batch(configs, parallelism=1, output=tmp_path / "serial.jsonl")
    parallel = run_batch(configs, parallelism=4, output=tmp_path / "parallel.jsonl")

    assert serial.dialogues == parallel.dialogues
    assert (tmp_path / "serial.jsonl").read_bytes() == (tmp_path / "parallel.jsonl").read_bytes()


def test_simulated_corpus_loads_back(tmp_path):
    path = tmp_path / "corpus.jsonl"
    result = run_batch(plan_simulations(4, seed=1, agents=SCRIPTED), output=path)

    assert load_corpus(path) == result.dialogues


def test_empty_batch(tmp_path):
    path = tmp_path / "corpus.jsonl"
    result = run_batch([], output=path)

    assert result.dialogues == []
    assert path.read_text() == ""


def test_duplicate_ids_are_rejected():
    config = plan_simulations(1, seed=0, agents=SCRIPTED)[0]
    with pytest.raises(ValueError):
        run_batch([config, config])


def test_failing_provider_yields_one_checkpoint(api_key, fake_sleep, tmp_path):
    configs = plan_simulations(10, seed=2, agents=SCRIPTED)
    configs[4] = replace(configs[4], agents={**configs[4].agents, Role.BUYER: model_seat()})
    checkpoints = tmp_path / "corpus.checkpoints.jsonl"

    result = run_batch(
        configs, parallelism=3, checkpoint_path=checkpoints, transport=failing_transport(), sleep=fake_sleep
    )

    assert [d.id for d in result.dialogues] == [c.dialogue_id for i, c in enumerate(configs) if i != 4]
    [checkpoint] = result.checkpoints
    assert checkpoint.dialogue_id == "sim-0004"
    assert checkpoint.turn_texts == []
    assert checkpoint.pending_role is Role.BUYER
    assert checkpoint.pending_messages[0][0] == "system"
    assert "503" in checkpoint.error
    assert load_checkpoints(checkpoints) == {"sim-0004": checkpoint}


def interrupting_transport() -> httpx.MockTransport:
    def handler(request: httpx.Request) -> httpx.Response:
        raise KeyboardInterrupt

    return httpx.MockTransport(handler)


def test_interrupted_batch_keeps_finished_dialogues(api_key, tmp_path):
    configs = plan_simulations(6, seed=4, agents=SCRIPTED)
    stalled = list(configs)
    stalled[5] = replace(configs[5], agents={**configs[5].agents, Role.BUYER: model_seat()})
    path = tmp_path / "corpus.jsonl"

    with pytest.raises(KeyboardInterrupt):
        run_batch(stalled, parallelism=1, output=path, transport=interrupting_transport())

    assert sorted(d.id for d in load_corpus(path)) == [c.dialogue_id for c in configs[:5]]

    resumed = run_batch(configs, parallelism=1, output=path, resume=True)
    run_batch(configs, output=tmp_path / "reference.jsonl")

    assert [d.id for d in resumed.dialogues] == [c.dialogue_id for c in configs]
    assert path.read_bytes() == (tmp_path / "reference.jsonl").read_bytes()


def test_resume_only_simulates_unfinished_dialogues(tmp_path):
    configs = plan_simulations(5, seed=8, agents=SCRIPTED)
    path = tmp_path / "corpus.jsonl"
    run_batch(configs[:3], output=path)

    async def go():
        simulator = DisputeSimulator(BatchConfig(parallelism=2))
        try:
            result = await simulator.run_batch(configs, output=path, resume=True)
            return result, simulator.stats
        finally:
            await simulator.aclose()

    result, stats = asyncio.run(go())

    assert stats.kept == 3
    assert stats.completed == 2
    assert len(result.dialogues) == 5
    assert load_corpus(path) == result.dialogues


def test_resume_replays_streamed_checkpoints(api_key, fake_sleep, tmp_path):
    config = make_config(ScriptedPolicy(PolicyKind.CONCESSION), model_seat())
    path = tmp_path / "corpus.jsonl"
    checkpoints = tmp_path / "corpus.checkpoints.jsonl"
    run_batch([config], output=path, checkpoint_path=checkpoints, transport=failing_transport(), sleep=fake_sleep)

    assert path.read_text() == ""
    assert list(load_checkpoints(checkpoints)) == ["sim-x"]

    transport, seen = replying("Fine by me.\nACCEPT-DEAL")
    result = run_batch([config], output=path, checkpoint_path=checkpoints, transport=transport, resume=True)

    [dialogue] = load_corpus(path)
    assert dialogue == result.dialogues[0]
    assert dialogue.metadata["resumed_turns"] == 1
    assert len(seen) == 1
    assert not checkpoints.exists()


def test_resume_needs_an_output():
    with pytest.raises(ValueError):
        run_batch(plan_simulations(1, seed=0, agents=SCRIPTED), resume=True)


def test_missing_credential_fails_before_any_dialogue(monkeypatch):
    monkeypatch.delenv("DISPUTEBENCH_OPENAI_KEY", raising=False)
    configs = [make_config(model_seat(), ScriptedPolicy(PolicyKind.CONCESSION))]

    with pytest.raises(AuthenticationError):
        run_batch(configs)


def test_checkpoint_resume_replays_recorded_turns(api_key, fake_sleep):
    config = make_config(ScriptedPolicy(PolicyKind.CONCESSION), model_seat())
    first = run_batch([config], transport=failing_transport(), sleep=fake_sleep)
    [checkpoint] = first.checkpoints

    assert checkpoint.pending_role is Role.SELLER
    assert len(checkpoint.turn_texts) == 1

    transport, seen = replying("Fine by me.\nACCEPT-DEAL")
    resumed = run_batch([replace(config, replay_texts=tuple(checkpoint.turn_texts))], transport=transport)
    [dialogue] = resumed.dialogues

    assert dialogue.turns[0].text == checkpoint.turn_texts[0]
    assert dialogue.outcome.kind is OutcomeKind.AGREEMENT
    assert dialogue.metadata["resumed_turns"] == 1
    assert len(seen) == 1


def test_checkpoint_file_round_trip(tmp_path):
    path = tmp_path / "cp.jsonl"
    checkpoints = [
        Checkpoint("sim-0002", ["hello"], Role.SELLER, [("system", "x"), ("user", "hello")], "HTTP 503"),
        Checkpoint("sim-0001", [], Role.BUYER, [("system", "y")], "timed out"),
    ]
    write_checkpoints(checkpoints, path)

    assert load_checkpoints(path) == {c.dialogue_id: c for c in checkpoints}
    assert load_checkpoints(tmp_path / "missing.jsonl") == {}


def test_malformed_offer_is_reprompted_once(api_key):
    transport, seen = replying('SUBMISSION: {"REF": "some"}', "Deal.\nACCEPT-DEAL")
    config = make_config(ScriptedPolicy(PolicyKind.CONCESSION), model_seat())

    [dialogue] = run_batch([config], transport=transport).dialogues

    assert dialogue.metadata["reprompts"] == 1
    assert dialogue.turns[1].action == Accept()
    assert len(seen) == 2
    assert seen[1]["messages"][-2] == {"role": "assistant", "content": 'SUBMISSION: {"REF": "some"}'}


def test_repeated_malformed_offer_is_downgraded_to_message(api_key):
    transport, _ = replying('SUBMISSION: {"REF": "some"}')
    config = make_config(ScriptedPolicy(PolicyKind.MESSAGE_ONLY), model_seat(), max_rounds=2)

    [dialogue] = run_batch([config], transport=transport).dialogues

    assert dialogue.metadata["downgraded_turns"] == [1, 3]
    assert isinstance(dialogue.turns[1].action, Message)
    assert dialogue.outcome.kind is OutcomeKind.NO_AGREEMENT


def test_illegal_accept_is_downgraded_to_message(api_key):
    transport, _ = replying("ACCEPT-DEAL")
    config = make_config(ScriptedPolicy(PolicyKind.MESSAGE_ONLY), model_seat(), max_rounds=1)

    [dialogue] = run_batch([config], transport=transport).dialogues

    assert dialogue.turns[1].action == Message("ACCEPT-DEAL")
    assert dialogue.metadata["downgraded_turns"] == [1]
    assert dialogue.outcome.kind is OutcomeKind.NO_AGREEMENT


def test_simulator_shares_clients_and_counts_outcomes(api_key):
    transport, _ = replying("Deal.\nACCEPT-DEAL")
    configs = [
        make_config(ScriptedPolicy(PolicyKind.CONCESSION), model_seat(), dialogue_id=f"m-{i}") for i in range(3)
    ]

    async def go():
        simulator = DisputeSimulator(BatchConfig(parallelism=2), transport=transport)
        try:
            result = await simulator.run_batch(configs)
            return result, simulator.stats, len(simulator._clients)
        finally:
            await simulator.aclose()

    result, stats, clients = asyncio.run(go())

    assert len(result.dialogues) == 3
    assert clients == 1
    assert stats.outcomes == {"Agreement": 3}
    assert stats.completed == 3
