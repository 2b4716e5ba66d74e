"""Utterance segmentation, IRP strategy labelling and annotation-quality evaluation."""

import asyncio
import json
import re
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from rich.console import Console
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from sklearn import metrics

from disputebench.corpus import (
    STRATEGIES,
    Dialogue,
    IrpStrategy,
    Segment,
    Turn,
    UnknownStrategyError,
)
from disputebench.negotiation import strip_action_tokens

if TYPE_CHECKING:
    from disputebench.gateway import ChatClient

console = Console()


class AnnotationError(Exception):
    """Base class for annotation failures."""


class UnannotatedSegmentError(AnnotationError, ValueError):
    pass


class IdMismatchError(AnnotationError, ValueError):
    pass


class InsufficientAnnotatorsError(AnnotationError, ValueError):
    pass


# Segmentation

_VERBS = frozenset(
    """
    am is are was were be been being have has had do does did done will would can could
    shall should may might must want wants need needs give gives gave get gets got take took
    make made pay paid refund remove apologize apologise accept reject offer think know knew
    understand agree believe hope feel felt see saw say said tell told write wrote buy bought
    sell sold send sent leave left keep kept like ask help try talk return fix let go went
    come came hear heard deal post report lie lied delete expect promise care wish work
    """.split()
)
_VERB_SUFFIXES = ("ed", "ing", "ize", "ise")
_WORD = re.compile(r"[A-Za-z']+")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


def _has_verb(chunk: str) -> bool:
    for token in _WORD.findall(chunk.lower()):
        core = token.strip("'")
        if core in _VERBS or "'" in core:
            return True
        if len(core) > 4 and core.endswith(_VERB_SUFFIXES):
            return True
    return False


def _clause_cuts(sentence: str) -> list[int]:
    cuts = {m.end() for m in re.finditer(r";", sentence)}
    cuts |= {m.end() for m in re.finditer(r"\s-(?=\s)", sentence)}
    cuts |= {m.start(1) for m in re.finditer(r"\s(and|but)\b", sentence, re.IGNORECASE)}
    return sorted(cuts)


def _split_sentence(sentence: str) -> list[str]:
    pieces: list[str] = []
    start = 0
    for cut in _clause_cuts(sentence):
        if _has_verb(sentence[start:cut]) and _has_verb(sentence[cut:]):
            pieces.append(sentence[start:cut].strip())
            start = cut
    pieces.append(sentence[start:].strip())
    return [p for p in pieces if p]


def segment_utterance(text: str) -> list[Segment]:
    """Split on sentence terminators, then on and/but/dash/semicolon between verb-bearing clauses."""
    if not text or not text.strip():
        return []
    segments = []
    for sentence in _SENTENCE_BREAK.split(text.strip()):
        segments.extend(Segment(piece) for piece in _split_sentence(sentence))
    return segments


def segment_turn_text(text: str) -> list[Segment]:
    """Segments of the free-text part of a turn; bare action turns yield none."""
    return segment_utterance(strip_action_tokens(text))


def ensure_segmented(dialogue: Dialogue) -> Dialogue:
    turns = tuple(
        turn if turn.segments else replace(turn, segments=tuple(segment_turn_text(turn.text)))
        for turn in dialogue.turns
    )
    return replace(dialogue, turns=turns)


# Rule-based labelling

_RULES: list[tuple[IrpStrategy, list[str]]] = [
    (
        IrpStrategy.POWER,
        [
            r"\bliars?\b",
            r"\bscam",
            r"\bfraud",
            r"\bthreat",
            r"\bsue\b",
            r"\blawyers?\b",
            r"\bnegative things\b",
            r"\bor else\b",
            r"\bregret\b",
            r"\breport you\b",
            r"\bcheat",
            r"\bridiculous\b",
            r"\bI('ll| will) (write|post|tell|warn)\b.*\b(review|everyone|negative|bad)",
            r"\bI('ll| will) make sure\b",
            r"\blast chance\b",
        ],
    ),
    (
        IrpStrategy.RIGHTS,
        [
            r"\baccording to\b",
            r"\bpolicy\b",
            r"\bfair(ly|ness)?\b",
            r"\bentitled\b",
            r"\bmy rights?\b",
            r"\bguarantee",
            r"\bterms\b",
            r"\bthe rules?\b",
            r"\bby law\b",
            r"\bdeserve",
            r"\bobligat",
        ],
    ),
    (
        IrpStrategy.CONCESSION,
        [
            r"\bok(ay)?,? fine\b",
            r"\binstead\b",
            r"\bfine,? I('ll| will)\b",
            r"\byou('re| are) right\b",
            r"\bI can live with\b",
            r"\bchanged my mind\b",
            r"\bI('ll| will) (drop|compromise|give in)\b",
            r"\bI('m| am) willing to\b",
            r"\bI('ll| will) meet you halfway\b",
        ],
    ),
    (
        IrpStrategy.PROPOSAL,
        [
            r"\boffer\b",
            r"\bhow about\b",
            r"\bwhat if\b",
            r"\bhow does that sound\b",
            r"\bpropos",
            r"\bwould you (accept|agree|be willing)\b",
            r"\bI can (give|offer|do)\b",
            r"\bin exchange\b",
            r"\bif you\b.*\bI('ll| will| can)\b",
            r"\bI('ll| will| can)\b.*\bif you\b",
            r"\bpartial refund\b",
            r"\bsuggest",
        ],
    ),
    (
        IrpStrategy.POSITIVE_EXPECTATIONS,
        [
            r"\bboth want\b",
            r"\bwe both\b",
            r"\byou and I\b",
            r"\btogether\b",
            r"\bwork (this|it) out\b",
            r"\bI('m| am) (sure|confident|hopeful) we\b",
            r"\bmutual(ly)?\b",
            r"\bwin-win\b",
            r"\bwe can (find|reach|resolve|solve|settle)\b",
            r"\bcommon ground\b",
        ],
    ),
    (
        IrpStrategy.PROCEDURAL,
        [
            r"^\W*(hello|hi|hey|good (morning|afternoon|evening))\b",
            r"\bcan we (please )?(talk|discuss|go over)\b",
            r"\blet'?s (talk|discuss|start|begin|focus|move on|go through|go over)\b",
            r"\bone (issue|thing) at a time\b",
            r"\bstep by step\b",
            r"\bnext issue\b",
            r"\bback to the\b",
        ],
    ),
    (
        IrpStrategy.INTERESTS,
        [
            r"\bI understand (you|your|that)\b",
            r"\bbecause\b",
            r"\bI (really )?(need|want|care|wish|would like)\b",
            r"\byou (need|want)\b",
            r"\bimportant to (me|you)\b",
            r"\bmatters? to\b",
            r"\bmy (concern|goal|priority|nephew)\b",
            r"\bwhy (do|did) you\b",
        ],
    ),
    (
        IrpStrategy.RESIDUAL,
        [
            r"\bsorry\b",
            r"\bthanks?\b",
            r"\bthank you\b",
            r"^\W*(ok(ay)?|sure|yes|no|alright|right|hmm+|great|good|bye)\b\W*(\w+\W*){0,3}$",
        ],
    ),
    (
        IrpStrategy.FACTS,
        [
            r"\b(was|were|did)\b",
            r"\bthe (product|jersey|item|order|package|size|shirt|seller|buyer)\b",
            r"\bwebsite\b",
            r"\bshipp",
            r"\bdeliver",
            r"\breceived\b",
            r"\bbought\b",
            r"\bsent\b",
            r"\d",
            r"\?\s*$",
        ],
    ),
]

_COMPILED_RULES = [
    (strategy, [re.compile(p, re.IGNORECASE) for p in patterns]) for strategy, patterns in _RULES
]


def classify_segment(text: str) -> IrpStrategy:
    """First matching rule group wins; anything unmatched is Residual."""
    for strategy, patterns in _COMPILED_RULES:
        if any(p.search(text) for p in patterns):
            return strategy
    return IrpStrategy.RESIDUAL


def annotate_rules(dialogue: Dialogue) -> Dialogue:
    turns = tuple(
        replace(
            turn,
            segments=tuple(Segment(seg.text, classify_segment(seg.text)) for seg in turn.segments),
        )
        for turn in ensure_segmented(dialogue).turns
    )
    return replace(dialogue, turns=turns)


# LLM labelling

RETRY_NOTE = "That is not one of the allowed labels. Reply with exactly one label from: {labels}."


def load_prompt_template(path: str | Path | None = None) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return (
        resources.files("disputebench")
        .joinpath("data", "irp_annotation_prompt.txt")
        .read_text(encoding="utf-8")
    )


def render_conversation(dialogue: Dialogue) -> str:
    return "\n".join(f"{turn.speaker.value}: {turn.text}" for turn in dialogue.turns)


def build_annotation_messages(
    template: str, dialogue: Dialogue, turn: Turn, segment: Segment
) -> list[tuple[str, str]]:
    prompt = (
        template.replace("{conversation}", render_conversation(dialogue))
        .replace("{speaker}", turn.speaker.value)
        .replace("{segment}", segment.text)
        .replace("{labels}", ", ".join(s.value for s in STRATEGIES))
    )
    return [("user", prompt)]


def parse_label(reply: str) -> IrpStrategy | None:
    """Read a strategy from a model reply: the whole reply, else its first recognizable word."""
    stripped = reply.strip().strip("\"'`.*: ")
    try:
        return IrpStrategy.parse(stripped)
    except UnknownStrategyError:
        pass
    for word in _WORD.findall(reply):
        try:
            return IrpStrategy.parse(word)
        except UnknownStrategyError:
            continue
    return None


@dataclass
class AnnotatorConfig:
    """Configuration for LLM annotation of a corpus."""

    concurrency: int = 4
    reannotate: bool = False
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise ValueError("concurrency must be positive")


@dataclass
class AnnotationStats:
    """Statistics for the annotation process."""

    dialogues: int = 0
    segments: int = 0
    retried: int = 0
    fallbacks: int = 0
    skipped: int = 0
    failed: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class AnnotationBatch:
    dialogues: list[Dialogue] = field(default_factory=list)
    failed: list[tuple[Dialogue, str]] = field(default_factory=list)


class LLMAnnotator:
    """Labels every segment with one chat-completion call per segment."""

    def __init__(
        self,
        client: "ChatClient",
        config: AnnotatorConfig | None = None,
        template: str | None = None,
    ):
        self.client = client
        self.config = config or AnnotatorConfig()
        self.template = template if template is not None else load_prompt_template()
        self.stats = AnnotationStats()
        self.semaphore = asyncio.Semaphore(self.config.concurrency)

    def _warn(self, message: str) -> None:
        self.stats.warnings.append(message)
        if self.config.verbose:
            console.print(f"  [yellow]{escape(message)}[/yellow]")

    async def _label(self, dialogue: Dialogue, turn: Turn, segment: Segment) -> IrpStrategy:
        messages = build_annotation_messages(self.template, dialogue, turn, segment)
        reply = await self.client.complete(messages)
        label = parse_label(reply)
        if label is None:
            self.stats.retried += 1
            labels = ", ".join(s.value for s in STRATEGIES)
            retry = messages + [("assistant", reply), ("user", RETRY_NOTE.format(labels=labels))]
            reply = await self.client.complete(retry)
            label = parse_label(reply)
        if label is None:
            self.stats.fallbacks += 1
            self._warn(
                f"{dialogue.id} turn {turn.index}: unrecognized label "
                f"{reply.strip()[:40]!r}, using Residual"
            )
            label = IrpStrategy.RESIDUAL
        return label

    async def annotate_dialogue(self, dialogue: Dialogue) -> Dialogue:
        turns = []
        for turn in ensure_segmented(dialogue).turns:
            segments = []
            for seg in turn.segments:
                segments.append(Segment(seg.text, await self._label(dialogue, turn, seg)))
                self.stats.segments += 1
            turns.append(replace(turn, segments=tuple(segments)))
        self.stats.dialogues += 1
        return replace(dialogue, turns=tuple(turns))

    async def _annotate_one(
        self, dialogue: Dialogue, progress: Progress, task_id: int
    ) -> tuple[Dialogue, str | None]:
        async with self.semaphore:
            try:
                if dialogue.is_annotated and dialogue.turns and not self.config.reannotate:
                    self.stats.skipped += 1
                    return dialogue, None
                return await self.annotate_dialogue(dialogue), None
            except Exception as exc:
                self.stats.failed += 1
                if self.config.verbose:
                    console.print(f"  [red]Failed: {dialogue.id}: {escape(str(exc))}[/red]")
                return dialogue, str(exc)
            finally:
                progress.advance(task_id)

    async def annotate_corpus(self, dialogues: list[Dialogue]) -> AnnotationBatch:
        """Annotate dialogues concurrently; provider failures are collected, not raised."""
        batch = AnnotationBatch()
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console,
            disable=not self.config.verbose,
        ) as progress:
            task_id = progress.add_task("Annotating dialogues...", total=len(dialogues))
            results = await asyncio.gather(
                *[self._annotate_one(d, progress, task_id) for d in dialogues]
            )
        for dialogue, error in results:
            if error is None:
                batch.dialogues.append(dialogue)
            else:
                batch.failed.append((dialogue, error))
        return batch


async def annotate_llm(
    dialogue: Dialogue, gw: "ChatClient", prompt: str | None = None
) -> Dialogue:
    return await LLMAnnotator(gw, template=prompt).annotate_dialogue(dialogue)


# Agreement

@dataclass(frozen=True)
class AnnotationJudgment:
    """Binary correct/incorrect verdicts of several annotators on one predicted label."""

    item_id: str
    verdicts: tuple[bool, ...]
    label: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdicts", tuple(bool(v) for v in self.verdicts))
        if len(self.verdicts) < 2:
            raise InsufficientAnnotatorsError(
                f"item {self.item_id!r} has {len(self.verdicts)} annotator(s), need at least 2"
            )

    @property
    def pairwise_agreement(self) -> float:
        k = len(self.verdicts)
        c = sum(self.verdicts)
        return (c * (c - 1) + (k - c) * (k - c - 1)) / (k * (k - 1))


def chance_agreement(prevalence: float) -> float:
    """Probability that two raters agree by chance when both say "correct" with ``prevalence``.

    P_e = pi**2 + (1 - pi)**2, where pi is the share of "correct" verdicts pooled over
    every rater and item.
    """
    return prevalence**2 + (1.0 - prevalence) ** 2


def a_kappa(judgments: Sequence[AnnotationJudgment]) -> float:
    """Chance-corrected agreement over binary verdicts.

    A-Kappa = (P_o - P_e) / (1 - P_e). P_o is the mean over items of the share of agreeing
    rater pairs, (c(c-1) + (k-c)(k-c-1)) / (k(k-1)) for c "correct" verdicts out of k, and
    P_e is ``chance_agreement`` at the pooled prevalence. Independent raters score about 0
    at any prevalence and perfect agreement scores 1, including when every verdict is the same.
    """
    if not judgments:
        raise InsufficientAnnotatorsError("no judgments")
    for judgment in judgments:
        if len(judgment.verdicts) < 2:
            raise InsufficientAnnotatorsError(f"item {judgment.item_id!r} has fewer than 2 annotators")
    observed = float(np.mean([j.pairwise_agreement for j in judgments]))
    verdicts = [v for j in judgments for v in j.verdicts]
    expected = chance_agreement(sum(verdicts) / len(verdicts))
    if np.isclose(expected, 1.0):
        # one verdict throughout; agreement is total
        return 1.0
    return (observed - expected) / (1.0 - expected)


def a_kappa_by_label(judgments: Sequence[AnnotationJudgment]) -> dict[str, float]:
    groups: dict[str, list[AnnotationJudgment]] = {}
    for judgment in judgments:
        groups.setdefault(judgment.label or "ALL", []).append(judgment)
    return {label: a_kappa(items) for label, items in sorted(groups.items())}


def _verdict(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, int | float):
        return bool(value)
    text = str(value).strip().lower()
    if text in ("correct", "true", "yes", "1"):
        return True
    if text in ("incorrect", "false", "no", "0"):
        return False
    raise ValueError(f"unrecognized verdict {value!r}")


def load_judgments(path: str | Path) -> list[AnnotationJudgment]:
    """Read ``{id, label?, verdicts: [...]}`` records, one per line."""
    judgments = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                judgments.append(
                    AnnotationJudgment(
                        item_id=str(record["id"]),
                        verdicts=tuple(_verdict(v) for v in record["verdicts"]),
                        label=record.get("label"),
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise AnnotationError(f"line {lineno}: {e}") from e
    return judgments


# Classification quality

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed by (gold label, predicted label)."""

    labels: tuple[Hashable, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(
        cls,
        gold: Sequence[Hashable],
        pred: Sequence[Hashable],
        labels: Sequence[Hashable] | None = None,
    ) -> "ConfusionMatrix":
        if len(gold) != len(pred):
            raise IdMismatchError(f"{len(gold)} gold labels but {len(pred)} predictions")
        if labels is None:
            seen = set(gold) | set(pred)
            if all(isinstance(lb, IrpStrategy) for lb in seen):
                labels = STRATEGIES
            else:
                labels = sorted(seen, key=str)
        if not gold:
            return cls(tuple(labels), np.zeros((len(labels), len(labels)), dtype=np.int64))
        index = {label: i for i, label in enumerate(labels)}
        counts = metrics.confusion_matrix(
            [index[g] for g in gold], [index[p] for p in pred], labels=list(range(len(labels)))
        )
        return cls(tuple(labels), counts)

    def __getitem__(self, key: tuple[Hashable, Hashable]) -> int:
        gold, pred = key
        return int(self.counts[self.labels.index(gold), self.labels.index(pred)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def to_frame(self) -> pd.DataFrame:
        names = [str(getattr(lb, "value", lb)) for lb in self.labels]
        return pd.DataFrame(self.counts, index=names, columns=names)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    per_class: dict[Hashable, ClassScore]
    macro_f1: float
    weighted_f1: float
    accuracy: float
    confusion: ConfusionMatrix
    warnings: list[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "label": str(getattr(label, "value", label)),
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
                "support": s.support,
            }
            for label, s in self.per_class.items()
        ]
        total = self.confusion.total
        rows.append({"label": "accuracy", "f1": self.accuracy, "support": total})
        rows.append({"label": "macro avg", "f1": self.macro_f1, "support": total})
        rows.append({"label": "weighted avg", "f1": self.weighted_f1, "support": total})
        return pd.DataFrame(rows, columns=["label", "precision", "recall", "f1", "support"])


def classification_report_from_labels(
    gold: Sequence[Hashable], pred: Sequence[Hashable]
) -> ClassificationReport:
    """Per-class precision/recall/F1 over the labels seen in gold or predictions."""
    confusion = ConfusionMatrix.from_labels(gold, pred)
    if confusion.total == 0:
        raise AnnotationError("no labels to evaluate")
    present = set(gold) | set(pred)
    scored = [label for label in confusion.labels if label in present]
    index = {label: i for i, label in enumerate(scored)}
    gold_idx = [index[g] for g in gold]
    pred_idx = [index[p] for p in pred]
    precision, recall, f1, support = metrics.precision_recall_fscore_support(
        gold_idx, pred_idx, labels=list(range(len(scored))), zero_division=0
    )
    warnings = [
        f"label {getattr(label, 'value', label)!r} has no gold support; F1 set to 0"
        for label, n in zip(scored, support, strict=True)
        if n == 0
    ]
    per_class = {
        label: ClassScore(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
        for i, label in enumerate(scored)
    }
    return ClassificationReport(
        per_class=per_class,
        macro_f1=float(f1.mean()),
        weighted_f1=float(np.average(f1, weights=support)),
        accuracy=float(metrics.accuracy_score(gold_idx, pred_idx)),
        confusion=confusion,
        warnings=warnings,
    )


def segment_labels(corpus: Sequence[Dialogue]) -> dict[str, IrpStrategy]:
    """Map ``dialogue:turn:segment`` ids to labels."""
    labels: dict[str, IrpStrategy] = {}
    for dialogue in corpus:
        for turn in dialogue.turns:
            for k, seg in enumerate(turn.segments):
                if seg.strategy is None:
                    raise UnannotatedSegmentError(
                        f"{dialogue.id} turn {turn.index} segment {k} is not annotated"
                    )
                labels[f"{dialogue.id}:{turn.index}:{k}"] = seg.strategy
    return labels


def classification_report(
    pred: Sequence[Dialogue], gold: Sequence[Dialogue]
) -> ClassificationReport:
    pred_labels = segment_labels(pred)
    gold_labels = segment_labels(gold)
    if set(pred_labels) != set(gold_labels):
        diff = sorted(set(pred_labels) ^ set(gold_labels))
        raise IdMismatchError(
            f"segment ids differ between corpora ({len(diff)} ids, e.g. {diff[:3]})"
        )
    ids = sorted(gold_labels)
    return classification_report_from_labels(
        [gold_labels[i] for i in ids], [pred_labels[i] for i in ids]
    )
