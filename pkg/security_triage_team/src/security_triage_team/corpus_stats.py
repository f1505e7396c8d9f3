"""
corpus_stats.py - Corpus-level tables and the prevalence-based sampling plan.

CWE prevalence counts artifacts, not findings: a CWE reported a hundred times
in one repository and once in another has prevalence two. Flags are ranked
the same way, by the number of distinct artifacts they appear in.

Sampling uses numpy's PCG64 generator seeded by the caller, so a plan can be
reproduced exactly from its recorded seed.
"""

import logging
from collections import Counter, defaultdict
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from security_triage_team.ingest import FindingSet
from security_triage_team.models import FindingRef, FlagKey, Severity, ToolName

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
SEVERITY_ORDER: Tuple[str, ...] = tuple(severity.value for severity in Severity)


class Share(BaseModel):
    model_config = ConfigDict(frozen=True)

    count: int = Field(ge=0)
    percentage: Decimal


class CweCount(BaseModel):
    model_config = ConfigDict(frozen=True)

    cwe: str
    artifact_count: int
    finding_count: int


class CorpusSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_findings: int = 0
    artifact_count: int = 0
    distinct_flags: int = 0
    distinct_cwes: int = 0
    per_tool: Dict[str, int] = Field(default_factory=dict)
    per_severity: Dict[str, Dict[str, Share]] = Field(
        default_factory=dict, description="Severity distribution within each tool."
    )
    per_severity_all_tools: Dict[str, Share] = Field(default_factory=dict)
    top_cwes: Tuple[CweCount, ...] = ()


class SampleParameters(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_per_flag: int = Field(ge=0)
    k: Optional[int] = None
    min_artifacts: Optional[int] = None


class SamplePlan(BaseModel):
    """Sampled finding references per flag; keys of `per_flag_samples` are `str(FlagKey)`."""

    model_config = ConfigDict(frozen=True)

    selected_flags: Tuple[str, ...]
    per_flag_samples: Dict[str, Tuple[FindingRef, ...]]
    seed: int
    rng_algorithm: str = RNG_ALGORITHM
    parameters: SampleParameters

    def samples_for(self, flag: FlagKey) -> Tuple[FindingRef, ...]:
        return self.per_flag_samples.get(str(flag), ())

    @property
    def total(self) -> int:
        return sum(len(samples) for samples in self.per_flag_samples.values())


def percentage(count: int, total: int) -> Decimal:
    """100 * count / total, rounded half-up to two decimals."""
    if total == 0:
        return Decimal("0.00")
    return (Decimal(100 * count) / Decimal(total)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def _shares(counts: Counter) -> Dict[str, Share]:
    total = sum(counts.values())
    return {
        severity: Share(count=counts[severity], percentage=percentage(counts[severity], total))
        for severity in SEVERITY_ORDER
        if counts[severity]
    }


def compute_summary(findings: FindingSet, top_n: Optional[int] = 10) -> CorpusSummary:
    """Totals per tool and severity, distinct flags, and CWE prevalence across artifacts."""
    per_tool = Counter(finding.tool.value for finding in findings)
    per_tool_severity: Dict[str, Counter] = defaultdict(Counter)
    all_severity: Counter = Counter()
    cwe_artifacts: Dict[str, Set[str]] = defaultdict(set)
    cwe_findings: Counter = Counter()
    for finding in findings:
        per_tool_severity[finding.tool.value][finding.severity.value] += 1
        all_severity[finding.severity.value] += 1
        for cwe in finding.cwe_ids:
            cwe_artifacts[cwe].add(finding.artifact_id)
            cwe_findings[cwe] += 1

    ranked = sorted(
        (CweCount(cwe=cwe, artifact_count=len(artifacts), finding_count=cwe_findings[cwe])
         for cwe, artifacts in cwe_artifacts.items()),
        key=lambda item: (-item.artifact_count, int(item.cwe.split("-")[1])),
    )
    return CorpusSummary(
        total_findings=len(findings),
        artifact_count=len(findings.by_artifact),
        distinct_flags=len(findings.by_flag),
        distinct_cwes=len(cwe_artifacts),
        per_tool={tool.value: per_tool[tool.value] for tool in ToolName if per_tool[tool.value]},
        per_severity={tool: _shares(counts) for tool, counts in sorted(per_tool_severity.items())},
        per_severity_all_tools=_shares(all_severity),
        top_cwes=tuple(ranked if top_n is None else ranked[:top_n]),
    )


def flag_artifact_counts(findings: FindingSet) -> Dict[FlagKey, int]:
    return {flag: len({f.artifact_id for f in group}) for flag, group in findings.by_flag.items()}


def select_prevalent_flags(findings: FindingSet, k: int, min_artifacts: int) -> List[FlagKey]:
    """
    The `k` flags seen in the most distinct artifacts, keeping only those seen
    in at least `min_artifacts`. Ties break on (tool, finding id).
    """
    if k <= 0:
        return []
    counts = flag_artifact_counts(findings)
    eligible = [flag for flag, count in counts.items() if count >= min_artifacts]
    eligible.sort(key=lambda flag: (-counts[flag], flag.tool.value, flag.finding_id))
    return eligible[:k]


def sample_findings(
    findings: FindingSet,
    flags: Iterable[FlagKey],
    n_per_flag: int,
    seed: int,
    k: Optional[int] = None,
    min_artifacts: Optional[int] = None,
) -> SamplePlan:
    """
    Draw up to `n_per_flag` findings per flag, uniformly without replacement.

    Group members are put in finding-reference order before drawing, so the
    plan depends only on the seed and the set's contents.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    selected: List[str] = []
    samples: Dict[str, Tuple[FindingRef, ...]] = {}
    for flag in flags:
        members = sorted((FindingRef.of(f) for f in findings.by_flag.get(flag, ())), key=lambda ref: ref.key)
        if len(members) <= n_per_flag:
            chosen = members
        else:
            picks = rng.choice(len(members), size=n_per_flag, replace=False)
            chosen = [members[index] for index in sorted(int(i) for i in picks)]
        selected.append(str(flag))
        samples[str(flag)] = tuple(chosen)
    plan = SamplePlan(
        selected_flags=tuple(selected),
        per_flag_samples=samples,
        seed=seed,
        parameters=SampleParameters(n_per_flag=n_per_flag, k=k, min_artifacts=min_artifacts),
    )
    logger.info("Sampled %d findings over %d flags (seed %d)", plan.total, len(selected), seed)
    return plan


# --- Text tables ---

def render_summary_text(summary: CorpusSummary) -> str:
    lines = [
        f"Findings: {summary.total_findings:,} across {summary.artifact_count} artifact(s)",
        f"Distinct flags: {summary.distinct_flags:,}; distinct CWEs: {summary.distinct_cwes}",
        "",
        f"{'Tool':<10} {'Findings':>10}",
    ]
    for tool, count in summary.per_tool.items():
        lines.append(f"{tool:<10} {count:>10,}")
    lines.append(f"{'Total':<10} {summary.total_findings:>10,}")
    for tool, shares in summary.per_severity.items():
        lines += ["", f"Severity ({tool})", f"{'Severity':<10} {'Count':>8} {'Share':>8}"]
        for severity, share in shares.items():
            lines.append(f"{severity:<10} {share.count:>8,} {str(share.percentage) + '%':>8}")
    if summary.top_cwes:
        lines += ["", f"{'CWE':<10} {'Artifacts':>10} {'Findings':>10}"]
        for item in summary.top_cwes:
            lines.append(f"{item.cwe:<10} {item.artifact_count:>10} {item.finding_count:>10,}")
    return "\n".join(lines)


def render_sample_text(plan: SamplePlan) -> str:
    lines = [f"Seed {plan.seed} ({plan.rng_algorithm}), {plan.total} findings over {len(plan.selected_flags)} flags"]
    for flag in plan.selected_flags:
        lines.append(f"{flag} ({len(plan.per_flag_samples[flag])})")
        lines += [f"  {ref.key}" for ref in plan.per_flag_samples[flag]]
    return "\n".join(lines)
