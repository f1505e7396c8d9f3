"""
evaluation.py - Score predicted labels against gold annotations and account for cost.

Two modes share one implementation: `multiclass_metrics` compares the four
security labels directly, `binary_metrics` first collapses them into
security-relevant versus non-security. Macro F1 averages per-class F1 over the
classes that occur in the gold labels; classes without support are listed in
`MetricsReport.excluded_from_macro`.

Money is computed with `decimal.Decimal` and rounded only for display.
"""

import json
import logging
from decimal import ROUND_CEILING, ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from security_triage_team.errors import EmptyInputError, PairingError
from security_triage_team.models import FindingRef, LabelCategory, SecurityLabel, label_category
from security_triage_team.reasoning.agent import AgentTrace

logger = logging.getLogger(__name__)

MULTICLASS_LABELS: Tuple[str, ...] = tuple(label.value for label in SecurityLabel)
BINARY_LABELS: Tuple[str, ...] = (LabelCategory.NON_SECURITY.value, LabelCategory.SECURITY_RELEVANT.value)
TOKENS_PER_PRICE_UNIT = Decimal(1_000_000)

_ROUNDING = {"half_up": ROUND_HALF_UP, "ceiling": ROUND_CEILING}


class MetricsMode(str, Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"


class GoldAnnotation(BaseModel):
    model_config = ConfigDict(frozen=True)

    finding_ref: FindingRef
    gold_label: SecurityLabel
    annotator_note: str = ""


class ConfusionMatrix(BaseModel):
    """Counts of (gold row, predicted column) pairs."""

    model_config = ConfigDict(frozen=True)

    labels: Tuple[str, ...]
    cells: Tuple[Tuple[int, ...], ...]

    def count(self, gold: str, predicted: str) -> int:
        return self.cells[self.labels.index(gold)][self.labels.index(predicted)]

    def row_sum(self, gold: str) -> int:
        return sum(self.cells[self.labels.index(gold)])

    def column_sum(self, predicted: str) -> int:
        column = self.labels.index(predicted)
        return sum(row[column] for row in self.cells)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.cells)


class ClassMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    support: int = Field(ge=0)


class MetricsReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: MetricsMode
    accuracy: float = Field(ge=0.0, le=1.0)
    macro_f1: float = Field(ge=0.0, le=1.0)
    per_class: Dict[str, ClassMetrics]
    confusion: ConfusionMatrix
    excluded_from_macro: Tuple[str, ...] = ()


class PriceConfig(BaseModel):
    """Prices in currency units per 1,000,000 tokens."""

    model_config = ConfigDict(frozen=True)

    input_price: Decimal = Field(Decimal("2.50"), ge=0)
    output_price: Decimal = Field(Decimal("10.00"), ge=0)


class CostRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_tokens: int = Field(ge=0)
    output_tokens: int = Field(ge=0)
    finding_count: int = Field(ge=1)
    artifact_count: Optional[int] = Field(default=None, ge=1)
    total_cost: Decimal
    per_finding_cost: Decimal
    per_artifact_cost: Optional[Decimal] = None
    mean_seconds_per_finding: Decimal


# --- Pairing ---

def pair_labels(
    gold: Mapping[str, SecurityLabel], predicted: Mapping[str, SecurityLabel]
) -> List[Tuple[SecurityLabel, SecurityLabel]]:
    """
    Match gold and predicted labels by finding reference.

    Raises:
        PairingError: If either side has references the other lacks.
    """
    unmatched = sorted(set(gold) ^ set(predicted))
    if unmatched:
        raise PairingError(f"{len(unmatched)} finding references are not paired", unmatched=unmatched)
    return [(gold[key], predicted[key]) for key in sorted(gold)]


def gold_label_map(annotations: Iterable[GoldAnnotation]) -> Dict[str, SecurityLabel]:
    labels: Dict[str, SecurityLabel] = {}
    duplicates = []
    for annotation in annotations:
        key = annotation.finding_ref.key
        if key in labels:
            duplicates.append(key)
        labels[key] = annotation.gold_label
    if duplicates:
        raise PairingError("Finding references annotated more than once", unmatched=sorted(set(duplicates)))
    return labels


def load_gold_annotations(path: Path | str) -> List[GoldAnnotation]:
    """Read newline-delimited gold annotations; `finding_ref` may be an object or its key string."""
    annotations = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        data = json.loads(raw)
        if isinstance(data.get("finding_ref"), str):
            data["finding_ref"] = FindingRef.from_key(data["finding_ref"])
        annotations.append(GoldAnnotation.model_validate(data))
    return annotations


# --- Metrics ---

def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def _report(pairs: Sequence[Tuple[str, str]], labels: Tuple[str, ...], mode: MetricsMode) -> MetricsReport:
    if not pairs:
        raise EmptyInputError("No paired labels to score")
    index = {label: position for position, label in enumerate(labels)}
    cells = [[0] * len(labels) for _ in labels]
    for gold, predicted in pairs:
        cells[index[gold]][index[predicted]] += 1
    confusion = ConfusionMatrix(labels=labels, cells=tuple(tuple(row) for row in cells))

    per_class: Dict[str, ClassMetrics] = {}
    for label in labels:
        true_positives = confusion.count(label, label)
        precision = _ratio(true_positives, confusion.column_sum(label))
        recall = _ratio(true_positives, confusion.row_sum(label))
        f1 = min(1.0, 2 * precision * recall / (precision + recall)) if precision + recall else 0.0
        per_class[label] = ClassMetrics(precision=precision, recall=recall, f1=f1, support=confusion.row_sum(label))

    scored = [label for label in labels if per_class[label].support > 0]
    excluded = tuple(label for label in labels if per_class[label].support == 0)
    correct = sum(confusion.count(label, label) for label in labels)
    return MetricsReport(
        mode=mode,
        accuracy=correct / len(pairs),
        macro_f1=sum(per_class[label].f1 for label in scored) / len(scored),
        per_class=per_class,
        confusion=confusion,
        excluded_from_macro=excluded,
    )


def multiclass_metrics(
    gold: Mapping[str, SecurityLabel], predicted: Mapping[str, SecurityLabel]
) -> MetricsReport:
    pairs = [(g.value, p.value) for g, p in pair_labels(gold, predicted)]
    return _report(pairs, MULTICLASS_LABELS, MetricsMode.MULTICLASS)


def binary_metrics(gold: Mapping[str, SecurityLabel], predicted: Mapping[str, SecurityLabel]) -> MetricsReport:
    """Security-relevant versus non-security, after collapsing the four labels."""
    pairs = [(label_category(g).value, label_category(p).value) for g, p in pair_labels(gold, predicted)]
    return _report(pairs, BINARY_LABELS, MetricsMode.BINARY)


# --- Cost ---

def token_cost(input_tokens: int, output_tokens: int, prices: PriceConfig) -> Decimal:
    return (Decimal(input_tokens) * prices.input_price + Decimal(output_tokens) * prices.output_price) \
        / TOKENS_PER_PRICE_UNIT


def cost_summary(
    traces: Sequence[AgentTrace], prices: PriceConfig, artifact_count: Optional[int] = None
) -> CostRecord:
    """
    Exact token, cost and runtime totals over a batch of traces.

    Raises:
        EmptyInputError: If there are no traces.
    """
    if not traces:
        raise EmptyInputError("Cost summary needs at least one trace")
    input_tokens = sum(trace.input_tokens for trace in traces)
    output_tokens = sum(trace.output_tokens for trace in traces)
    total = token_cost(input_tokens, output_tokens, prices)
    seconds = sum((Decimal(str(trace.wall_seconds)) for trace in traces), Decimal(0))
    return CostRecord(
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        finding_count=len(traces),
        artifact_count=artifact_count,
        total_cost=total,
        per_finding_cost=total / len(traces),
        per_artifact_cost=total / artifact_count if artifact_count else None,
        mean_seconds_per_finding=seconds / len(traces),
    )


def format_money(amount: Decimal, places: int = 2, rounding: str = "half_up") -> str:
    quantum = Decimal(1).scaleb(-places)
    return f"${amount.quantize(quantum, rounding=_ROUNDING[rounding])}"


def format_cost(record: CostRecord, rounding: str = "half_up") -> Dict[str, str]:
    """Display strings: total and per-artifact cost in cents, per-finding cost to a tenth of a cent."""
    shown = {
        "input_tokens": f"{record.input_tokens:,}",
        "output_tokens": f"{record.output_tokens:,}",
        "total_cost": format_money(record.total_cost, 2, rounding),
        "per_finding_cost": format_money(record.per_finding_cost, 3, rounding),
        "mean_seconds_per_finding": f"{record.mean_seconds_per_finding.quantize(Decimal('0.01'), ROUND_HALF_UP)}",
    }
    if record.per_artifact_cost is not None:
        shown["per_artifact_cost"] = format_money(record.per_artifact_cost, 2, rounding)
    return shown


# --- Display ---

def format_percent(value: float) -> str:
    """A ratio in [0, 1] as a percentage with two decimals, rounded half-up."""
    return f"{(Decimal(repr(value)) * 100).quantize(Decimal('0.01'), ROUND_HALF_UP)}%"


def render_confusion_text(report: MetricsReport) -> str:
    """Aligned confusion table (gold rows, predicted columns) followed by per-class metrics."""
    labels = report.confusion.labels
    width = max(len("gold \\ predicted"), *(len(label) for label in labels))
    header = "gold \\ predicted".ljust(width) + "".join(f"  {label:>{len(label)}}" for label in labels)
    lines = [header]
    for label, row in zip(labels, report.confusion.cells):
        lines.append(label.ljust(width) + "".join(f"  {count:>{len(col)}}" for count, col in zip(row, labels)))
    lines.append("")
    lines.append(f"{'class'.ljust(width)}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'support':>7}")
    for label in labels:
        metrics = report.per_class[label]
        lines.append(
            f"{label.ljust(width)}  {format_percent(metrics.precision):>9}  {format_percent(metrics.recall):>9}"
            f"  {format_percent(metrics.f1):>9}  {metrics.support:>7}"
        )
    lines.append("")
    lines.append(f"accuracy {format_percent(report.accuracy)}, macro F1 {format_percent(report.macro_f1)}")
    if report.excluded_from_macro:
        lines.append(f"excluded from macro F1 (no gold support): {', '.join(report.excluded_from_macro)}")
    return "\n".join(lines)
