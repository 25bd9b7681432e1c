"""Traffic forecasting: per-edge, per-bucket exponential smoothing across days,
plus real-time blending of live speeds into forecast profiles."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .network import DAY_SECONDS, RoadNetwork, SpeedProfile


class NonPositiveSpeed(ValueError):
    pass


@dataclass(frozen=True)
class SpeedObservation:
    edge_id: str
    day_index: int
    bucket_index: int
    observed_speed: float  # m/s

    def __post_init__(self):
        if self.observed_speed <= 0:
            raise NonPositiveSpeed(f"observed_speed must be > 0: {self.observed_speed}")
        if self.day_index < 0:
            raise ValueError("day_index must be >= 0")


@dataclass
class ForecastModel:
    bucket_seconds: int = 3600
    alpha: float = 0.3
    default_speed: float = 13.9
    # (edge_id, bucket_index) -> [smoothed_speed, observation_count]
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        if DAY_SECONDS % self.bucket_seconds != 0:
            raise ValueError("bucket_seconds must divide 86400")

    @property
    def buckets_per_day(self) -> int:
        return DAY_SECONDS // self.bucket_seconds

    def ingest(self, observations: list) -> "ForecastModel":
        """Update smoothed means across days, in day order.

        Multiple observations for the same (edge, bucket) within one day are
        averaged before smoothing, so permuting a day's batch has no effect.
        """
        per_day: dict[int, dict] = {}
        for obs in observations:
            if obs.observed_speed <= 0:
                raise NonPositiveSpeed(str(obs))
            if obs.bucket_index >= self.buckets_per_day:
                raise ValueError(f"bucket_index {obs.bucket_index} out of range")
            day = per_day.setdefault(obs.day_index, {})
            key = (obs.edge_id, obs.bucket_index)
            day.setdefault(key, []).append(obs.observed_speed)
        for day_index in sorted(per_day):
            for key in sorted(per_day[day_index]):
                speeds = per_day[day_index][key]
                mean = sum(speeds) / len(speeds)
                if key in self.state:
                    s, n = self.state[key]
                    self.state[key] = [self.alpha * mean + (1 - self.alpha) * s, n + len(speeds)]
                else:
                    self.state[key] = [mean, len(speeds)]
        return self

    def forecast_profile(self, edge_id: str, static_profile: Optional[SpeedProfile] = None) -> SpeedProfile:
        """Per-bucket smoothed mean; unobserved buckets fall back to the static
        profile, else the default speed."""
        speeds = []
        for b in range(self.buckets_per_day):
            key = (edge_id, b)
            if key in self.state:
                speeds.append(self.state[key][0])
            elif static_profile is not None:
                speeds.append(static_profile.speed_at(b * self.bucket_seconds))
            else:
                speeds.append(self.default_speed)
        return SpeedProfile(self.bucket_seconds, tuple(speeds))

    def blend_realtime(
        self,
        edge_id: str,
        live_speed: float,
        now: float,
        static_profile: Optional[SpeedProfile] = None,
        horizon_seconds: float = 1800.0,
    ) -> SpeedProfile:
        """Forecast profile with near-term buckets pulled toward a live speed.

        A bucket starting ``d`` seconds after ``now`` (current bucket: d=0)
        takes the value live + (forecast - live) * d / H; beyond the horizon
        the plain forecast applies.  Pure: the historical state is untouched.
        """
        if live_speed <= 0:
            raise NonPositiveSpeed(f"live_speed must be > 0: {live_speed}")
        base = self.forecast_profile(edge_id, static_profile)
        speeds = list(base.speeds)
        nb = self.buckets_per_day
        current = int(now % DAY_SECONDS) // self.bucket_seconds
        offset = 0.0  # current bucket decays from now itself
        k = 0
        while offset < horizon_seconds and k < nb:
            b = (current + k) % nb
            frac = offset / horizon_seconds
            speeds[b] = live_speed + (base.speeds[b] - live_speed) * frac
            if k == 0:
                offset += self.bucket_seconds - (now % self.bucket_seconds)
            else:
                offset += self.bucket_seconds
            k += 1
        return SpeedProfile(self.bucket_seconds, tuple(speeds))

    def to_dict(self) -> dict:
        return {
            "bucket_seconds": self.bucket_seconds,
            "alpha": self.alpha,
            "default_speed": self.default_speed,
            "state": [
                {"edge_id": e, "bucket_index": b, "smoothed_speed": s, "count": n}
                for (e, b), (s, n) in sorted(self.state.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastModel":
        model = cls(
            bucket_seconds=d.get("bucket_seconds", 3600),
            alpha=d.get("alpha", 0.3),
            default_speed=d.get("default_speed", 13.9),
        )
        for rec in d.get("state", []):
            model.state[(rec["edge_id"], rec["bucket_index"])] = [rec["smoothed_speed"], rec["count"]]
        return model


def ingest(model: ForecastModel, observations: list) -> ForecastModel:
    return model.ingest(observations)


def forecast_network(model: ForecastModel, network: RoadNetwork) -> RoadNetwork:
    """Network copy whose edges carry forecast profiles (observed edges only)."""
    overrides = {}
    for edge_id in {e for (e, _b) in model.state}:
        if edge_id in network.edges:
            static = network.profile_for(network.edges[edge_id])
            overrides[edge_id] = model.forecast_profile(edge_id, static)
    return network.with_profiles(overrides)


def read_observation_lines(lines) -> list:
    """Parse newline-delimited JSON observation records."""
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        out.append(
            SpeedObservation(
                edge_id=d["edge_id"],
                day_index=d["day_index"],
                bucket_index=d["bucket_index"],
                observed_speed=d["observed_speed"],
            )
        )
    return out
