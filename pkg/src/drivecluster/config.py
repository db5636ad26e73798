"""Run configuration: one flat key = value file plus flag overrides.

Every run is reproducible from (config, seed, input files); the split/merge
threshold t_kl deliberately has no default because it is maneuver-specific.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .ekfsim import EkfConfig


@dataclass
class RunConfig:
    # EKF comparison
    r_diag: tuple[float, ...] = (0.01, 0.01, 0.005, 0.01)
    q_diag: tuple[float, ...] = (0.05, 0.05, 0.01, 0.1)
    dt_predict: float = 0.010
    update_period: float = 0.080
    k_gain: float = 2.5
    p_floor: float = 1e-15
    phi_max: float = 0.61
    v_floor: float = 0.1
    # clustering loop
    t_kl: float | None = None  # required for clustering; no sensible default
    init_method: str = "pam"
    n_k_min: int = 5
    n_k_max: int = 5
    n_resample: int = 50
    max_em_iters: int = 50
    max_outer_iters: int = 100
    seed: int = 0
    threads: int = 1
    # io and export toggles
    data: str = ""
    out: str = ""
    export_pair_traces: bool = False

    def ekf_config(self) -> EkfConfig:
        return EkfConfig(
            r_diag=tuple(self.r_diag), q_diag=tuple(self.q_diag),
            dt_predict=self.dt_predict, update_period=self.update_period,
            k_gain=self.k_gain, p_floor=self.p_floor,
            phi_max=self.phi_max, v_floor=self.v_floor,
        )

    def n_k_range(self) -> range:
        if self.n_k_max < self.n_k_min:
            raise ValueError("n_k_max must be >= n_k_min")
        return range(self.n_k_min, self.n_k_max + 1)

    def require_t_kl(self) -> float:
        if self.t_kl is None:
            raise ValueError("t_kl is required (set it in the config file or "
                             "with --t-kl); it is maneuver-specific")
        return float(self.t_kl)

    # -- key = value (de)serialization ------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in fields:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse_value(val.strip(), fields[key].type)
        return cls(**values)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, annotation: str):
    ann = annotation if isinstance(annotation, str) else str(annotation)
    if text.lower() == "none":
        return None
    if "tuple" in ann:
        return tuple(float(p.strip()) for p in text.split(",") if p.strip())
    if ann.startswith("bool"):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if ann.startswith("int"):
        return int(text)
    if ann.startswith("float"):
        return float(text)
    return text
