"""Pipeline configuration file: schedule, sampling, and guidance knobs.

The editing-strength default (eta) is calibrated on the pilot checkpoint:
with log-form energies the w_* weights only set relative term importance,
so eta alone carries the absolute injection strength.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .guidance import GuidanceWeights
from .schedule import NoiseSchedule, make_schedule, subsample_schedule


@dataclass
class PipelineConfig:
    # schedule
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    T: int = 50
    # sampling
    cfg_scale: float = 5.0
    # guidance
    w_e: float = 4e-4
    w_c: float = 4e-4
    w_q: float = 1e-3
    alpha: float = 1.0
    beta: float = 1.0
    eta: float = 8000.0
    n1: int | None = None
    n2: int | None = None
    feature_tap: str = "dec1"
    mask_radius: float = 2.0
    linear_energy: bool = False

    def weights(self) -> GuidanceWeights:
        return GuidanceWeights(
            w_e=self.w_e, w_c=self.w_c, eta_quality=self.w_q,
            alpha=self.alpha, beta=self.beta, eta=self.eta, n1=self.n1, n2=self.n2,
        )

    def schedule(self) -> NoiseSchedule:
        dense = make_schedule(self.train_steps, self.beta_start, self.beta_end)
        return subsample_schedule(dense, self.T)

    def to_yaml(self, path):
        Path(path).write_text(yaml.safe_dump(asdict(self), sort_keys=True))


def load_pipeline_config(path) -> PipelineConfig:
    payload = yaml.safe_load(Path(path).read_text()) or {}
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**payload)
