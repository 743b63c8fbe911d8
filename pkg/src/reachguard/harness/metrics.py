"""Evaluation summary in the layout of the results tables."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..envs import COLLISION, ERROR, GOAL, SAFE_STOP, TIMEOUT


@dataclass(frozen=True)
class MetricsSummary:
    """Per-run aggregate; the outcome percentages partition 100.

    ``errors_pct`` counts episodes whose integration failed; it is zero in
    every run that completes normally.
    """

    episodes: int
    planning_time_s: float
    goals_pct: float
    stopped_pct: float
    collisions_pct: float
    timeouts_pct: float
    errors_pct: float
    interventions_pct: float
    reward_min: float
    reward_mean: float
    reward_max: float

    FIELDS = ("episodes", "planning_time_s", "goals_pct", "stopped_pct", "collisions_pct", "timeouts_pct",
              "errors_pct", "interventions_pct", "reward_min", "reward_mean", "reward_max")

    @classmethod
    def from_records(cls, records) -> "MetricsSummary":
        records = list(records)
        n = len(records)
        if n == 0:
            raise ValueError("no episodes to summarize")
        statuses = [r.status for r in records]

        def pct(s):
            return 100.0 * sum(st == s for st in statuses) / n

        times = np.concatenate([np.asarray(r.adjust_times, float) for r in records])
        steps = sum(r.n_iterations for r in records)
        interventions = sum(r.interventions for r in records)
        rewards = np.array([r.total_reward for r in records])
        return cls(
            episodes=n,
            planning_time_s=float(times.mean()) if times.size else 0.0,
            goals_pct=pct(GOAL), stopped_pct=pct(SAFE_STOP), collisions_pct=pct(COLLISION),
            timeouts_pct=pct(TIMEOUT), errors_pct=pct(ERROR),
            interventions_pct=100.0 * interventions / max(steps, 1),
            reward_min=float(rewards.min()), reward_mean=float(rewards.mean()), reward_max=float(rewards.max()),
        )

    @property
    def outcome_total(self) -> float:
        return self.goals_pct + self.stopped_pct + self.collisions_pct + self.timeouts_pct + self.errors_pct

    def to_csv(self) -> str:
        d = asdict(self)
        return ",".join(self.FIELDS) + "\n" + ",".join(f"{d[k]:.6g}" for k in self.FIELDS) + "\n"

    def table(self) -> str:
        """Fixed-width text table, one column per figure."""
        heads = ("Avg. Planning Time [s]", "Goals [%]", "Safely Stopped [%]", "Collisions [%]",
                 "Safety Interventions [%]", "Reward min/mean/max")
        vals = (f"{self.planning_time_s:.4f}", f"{self.goals_pct:.1f}", f"{self.stopped_pct:.1f}",
                f"{self.collisions_pct:.1f}", f"{self.interventions_pct:.1f}",
                f"{self.reward_min:.1f}/{self.reward_mean:.1f}/{self.reward_max:.1f}")
        widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        line = " | ".join(h.ljust(w) for h, w in zip(heads, widths))
        return line + "\n" + " | ".join(v.ljust(w) for v, w in zip(vals, widths)) + "\n"


def episodes_csv(records, seeds=None) -> str:
    """One row per episode."""
    seeds = list(seeds) if seeds is not None else [""] * len(records)
    lines = ["episode,seed,status,iterations,reward,interventions,mean_adjust_s,max_adjust_s"]
    for i, (r, seed) in enumerate(zip(records, seeds)):
        t = np.asarray(r.adjust_times, float)
        lines.append(f"{i},{seed},{r.status},{r.n_iterations},"
                     f"{r.total_reward:.6g},{r.interventions},{t.mean() if t.size else 0:.6g},"
                     f"{t.max() if t.size else 0:.6g}")
    return "\n".join(lines) + "\n"
