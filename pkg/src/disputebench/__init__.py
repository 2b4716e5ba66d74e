"""Personality-conditioned dispute negotiation benchmark package."""

from disputebench.corpus import Dialogue, IrpCategory, IrpStrategy, Trait, load_corpus, write_corpus
from disputebench.metrics import SpeakerRecord, build_speaker_records
from disputebench.negotiation import IssueAllocation, Outcome, Role, score
from disputebench.simulator import DisputeSimulator, SimulationConfig, plan_simulations, run_batch
from disputebench.stats import regression_battery

__version__ = "0.1.0"

__all__ = [
    "Dialogue",
    "DisputeSimulator",
    "IrpCategory",
    "IrpStrategy",
    "IssueAllocation",
    "Outcome",
    "Role",
    "SimulationConfig",
    "SpeakerRecord",
    "Trait",
    "build_speaker_records",
    "load_corpus",
    "plan_simulations",
    "regression_battery",
    "run_batch",
    "score",
    "write_corpus",
]
