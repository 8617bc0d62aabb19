"""Route completion, driving scores, weighted driving scores and success rates.

Episode logs are stored one JSON object per line. Summaries are CSV with a
header row; floats use ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field

import yaml

from .errors import UnavailableError, ValidationError
from .sim.world import DEFAULT_PENALTIES, InfractionEvent


@dataclass
class EpisodeLog:
    route_id: str
    kind: str | None
    completion: float
    infractions: list = field(default_factory=list)  # InfractionEvent
    route_length: float = 0.0
    density: int = 0
    done_reason: str | None = None
    steps: int = 0
    ret: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.completion <= 1.0:
            raise ValidationError(f"{self.route_id}: completion {self.completion} outside [0, 1]")
        if self.density < 0:
            raise ValidationError(f"{self.route_id}: negative scenario density {self.density}")
        if self.route_length < 0:
            raise ValidationError(f"{self.route_id}: negative route length")

    def counts(self) -> Counter:
        return Counter(ev.kind for ev in self.infractions)

    def to_dict(self) -> dict:
        return {
            "route-id": self.route_id,
            "kind": self.kind,
            "completion": self.completion,
            "infractions": [ev.to_dict() for ev in self.infractions],
            "route-length": self.route_length,
            "scenario-density": self.density,
            "done-reason": self.done_reason,
            "steps": self.steps,
            "return": self.ret,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        try:
            return cls(
                route_id=str(d["route-id"]),
                kind=d.get("kind"),
                completion=float(d["completion"]),
                infractions=[InfractionEvent.from_dict(e) for e in d.get("infractions", [])],
                route_length=float(d.get("route-length", 0.0)),
                density=int(d.get("scenario-density", 0)),
                done_reason=d.get("done-reason"),
                steps=int(d.get("steps", 0)),
                ret=float(d.get("return", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad episode log: {exc!r}") from exc


def dump_logs(logs, fh):
    for log in logs:
        fh.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")


def write_logs(path: str, logs):
    with open(path, "w") as fh:
        dump_logs(logs, fh)


def read_logs(path: str) -> list[EpisodeLog]:
    """Parse a log file; malformed lines raise with their 1-based line number."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(EpisodeLog.from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValidationError, AttributeError) as exc:
                raise ValidationError(f"{path}:{n}: malformed episode log: {exc}") from exc
    return out


@dataclass
class PenaltyTable:
    factors: dict = field(default_factory=lambda: dict(DEFAULT_PENALTIES))

    def __post_init__(self):
        for kind, f in self.factors.items():
            if not 0.0 < float(f) < 1.0:
                raise ValidationError(f"penalty for {kind} must lie in (0, 1), got {f}")

    def __getitem__(self, kind: str) -> float:
        try:
            return float(self.factors[kind])
        except KeyError:
            raise ValidationError(f"unknown infraction kind {kind!r}") from None

    @classmethod
    def load(cls, path: str) -> "PenaltyTable":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: expected a mapping of infraction kind to factor")
        factors = dict(DEFAULT_PENALTIES)
        factors.update({str(k): float(v) for k, v in data.items()})
        return cls(factors)


def driving_score(log: EpisodeLog, table: PenaltyTable | None = None) -> float:
    """Completion times one penalty factor per infraction."""
    table = table or PenaltyTable()
    score = log.completion
    for ev in log.infractions:
        score *= table[ev.kind]
    return score


def weighted_driving_score(log: EpisodeLog, table: PenaltyTable | None = None) -> float:
    """Penalty exponents are infraction counts divided by scenario density (raw counts at density 0)."""
    table = table or PenaltyTable()
    score = log.completion
    for kind, count in sorted(log.counts().items()):
        if count < 0:
            raise ValidationError(f"negative infraction count for {kind}")
        exponent = count / log.density if log.density > 0 else count
        score *= table[kind] ** exponent
    return score


def succeeded(log: EpisodeLog) -> bool:
    return log.completion == 1.0 and not log.infractions


def success_rate(logs) -> dict:
    """Fraction of fully completed, infraction-free episodes per scenario kind."""
    groups: dict = {}
    for log in logs:
        if log.kind is None:
            raise ValidationError(f"{log.route_id}: success rate needs a scenario kind")
        groups.setdefault(log.kind, []).append(succeeded(log))
    return {k: sum(v) / len(v) for k, v in sorted(groups.items())}


def overall_success(logs) -> float:
    logs = list(logs)
    if not logs:
        raise UnavailableError("no episodes")
    return sum(succeeded(l) for l in logs) / len(logs)


def infractions_per_km(logs, table: PenaltyTable | None = None) -> dict:
    table = table or PenaltyTable()
    logs = list(logs)
    km = sum(l.completion * l.route_length for l in logs) / 1000.0
    if km <= 0:
        raise UnavailableError("no distance driven")
    counts = Counter()
    for l in logs:
        counts.update(l.counts())
    kinds = sorted(set(table.factors) | set(counts))
    return {k: counts[k] / km for k in kinds}


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def summary_rows(logs, table: PenaltyTable | None = None):
    """Per-episode rows plus a final ``mean`` row (arithmetic means, summed counts)."""
    table = table or PenaltyTable()
    kinds = sorted(table.factors)
    header = ["route-id", "kind", "RC", "DS", "WDS"] + kinds
    rows = []
    totals = Counter()
    for log in logs:
        c = log.counts()
        totals.update(c)
        rows.append(
            [log.route_id, log.kind or "", log.completion, driving_score(log, table), weighted_driving_score(log, table)]
            + [c[k] for k in kinds]
        )
    if rows:
        n = len(rows)
        means = [sum(r[i] for r in rows) / n for i in (2, 3, 4)]
        rows.append(["mean", ""] + means + [totals[k] for k in kinds])
    return header, rows


def summary_csv(logs, table: PenaltyTable | None = None) -> str:
    header, rows = summary_rows(logs, table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def by_kind_csv(logs, table: PenaltyTable | None = None) -> str:
    """One row per scenario kind: episodes, success rate, mean RC, DS and WDS."""
    table = table or PenaltyTable()
    groups: dict = {}
    for log in logs:
        groups.setdefault(log.kind or "plain", []).append(log)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "episodes", "success-rate", "RC", "DS", "WDS"])
    for kind, group in sorted(groups.items()):
        n = len(group)
        w.writerow(
            [
                kind,
                n,
                _fmt(sum(succeeded(l) for l in group) / n),
                _fmt(sum(l.completion for l in group) / n),
                _fmt(sum(driving_score(l, table) for l in group) / n),
                _fmt(sum(weighted_driving_score(l, table) for l in group) / n),
            ]
        )
    return buf.getvalue()

