"""Training configuration and per-dataset presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

from .errors import ConfigError

NEVER = 10**9  # P_MLE value that disables the MLE sub-step


@dataclass
class TrainConfig:
    K_AE: int = 5000
    K_JOINT: int = 10000
    P_MLE: int = 2
    batch_size: int = 128
    lr_ae: float = 1e-3
    lr_disc: float = 1e-3
    lr_gen: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    reg_recon: float = 0.01
    reg_kinetic: float = 0.05
    reg_jacobian: float = 0.01
    reg_directional: float = 0.01
    atol: float = 1e-2
    rtol: float = 1e-3
    d_layer: int = 1
    r_acti: str = "softplus"
    seed: int = 0
    irregular_rate: float = 0.0
    M: int | None = None  # adversarial sampling length; None -> retained length
    dim_h: int | None = None  # None -> 4 * dim(x)
    ode_substeps: int = 8  # RK4 steps per regular grid interval (encoder/decoder/discriminator)
    n_probes: int = 1
    max_flow_steps: int = 2000
    checkpoint_every: int = 0  # 0 -> only at the end
    mle: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("K_AE", "K_JOINT", "batch_size", "ode_substeps", "max_flow_steps", "checkpoint_every", "n_probes"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.P_MLE < 1:
            raise ConfigError("P_MLE must be >= 1")
        if self.batch_size < 1 or self.ode_substeps < 1:
            raise ConfigError("batch_size and ode_substeps must be >= 1")
        for name in ("reg_recon", "reg_kinetic", "reg_jacobian", "reg_directional", "lr_ae", "lr_disc", "lr_gen"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not (self.atol > 0 and self.rtol > 0):
            raise ConfigError("atol and rtol must be positive")
        if not 0.0 <= self.irregular_rate < 1.0:
            raise ConfigError("irregular_rate must lie in [0, 1)")
        if self.d_layer < 1:
            raise ConfigError("d_layer must be >= 1")
        if self.r_acti not in ("softplus", "sigmoid", "identity", "tanh", "relu"):
            raise ConfigError(f"unknown r_acti {self.r_acti!r}")
        if self.M is not None and self.M < 2:
            raise ConfigError("M must be >= 2")

    @property
    def mle_active(self) -> bool:
        return self.mle and self.P_MLE < NEVER

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = (base or cls()).to_dict()
        merged.update(obj)
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj, base)


def _row(atol, rtol, p_mle, k_ae, d_layer, acti, recon, kinetic, jac, direc, rate=0.0) -> dict:
    # "None" entries in the table mean the term is switched off
    w = [0.0 if v is None else v for v in (recon, kinetic, jac, direc)]
    return dict(atol=atol, rtol=rtol, P_MLE=p_mle, K_AE=k_ae, d_layer=d_layer, r_acti=acti,
                reg_recon=w[0], reg_kinetic=w[1], reg_jacobian=w[2], reg_directional=w[3],
                irregular_rate=rate)


PRESETS: dict[str, dict] = {
    "sines-regular": _row(1e-2, 1e-3, 1, 5000, 1, "softplus", 0.01, 0.05, 0.1, 0.1),
    "stocks-regular": _row(1e-2, 1e-3, 2, 10000, 1, "softplus", 0.01, 0.01, 0.05, 0.01),
    "energy-regular": _row(1e-3, 1e-2, 2, 5000, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01),
    "mujoco-regular": _row(1e-3, 1e-2, 2, 5000, 2, "sigmoid", 0.01, 0.05, 0.01, 0.01),
    "sines-30": _row(1e-2, 1e-3, 2, 5000, 1, "softplus", 0.01, 0.05, 0.01, 0.01, 0.3),
    "stocks-30": _row(1e-2, 1e-3, 2, 10000, 1, "softplus", 0.01, None, None, 0.05, 0.3),
    "energy-30": _row(1e-3, 1e-2, 2, 5000, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01, 0.3),
    "mujoco-30": _row(1e-3, 1e-2, 2, 2500, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01, 0.3),
    "sines-50": _row(1e-2, 1e-3, 2, 5000, 2, "softplus", 0.01, 0.05, 0.01, 0.01, 0.5),
    "stocks-50": _row(1e-3, 1e-3, 2, 10000, 1, "softplus", None, 0.05, 0.01, 0.05, 0.5),
    "energy-50": _row(1e-3, 1e-2, 2, 5000, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01, 0.5),
    "mujoco-50": _row(1e-3, 1e-2, 2, 1500, 2, "sigmoid", 0.1, 0.1, 0.01, 0.01, 0.5),
    "sines-70": _row(1e-2, 1e-3, 2, 5000, 1, "softplus", 0.01, 0.05, 0.01, 0.01, 0.7),
    "stocks-70": _row(1e-2, 1e-3, 1, 10000, 1, "softplus", None, 0.05, 0.01, 0.05, 0.7),
    "energy-70": _row(1e-3, 1e-2, 2, 2500, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01, 0.7),
    "mujoco-70": _row(1e-3, 1e-2, 2, 2500, 2, "sigmoid", 0.01, 0.5, 0.1, 0.01, 0.7),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return TrainConfig.from_dict({**PRESETS[name], **overrides})
