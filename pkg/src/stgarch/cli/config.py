"""INI configuration with typed defaults.

Sections: ``data``, ``model``, ``kernel``, ``optimizer``, ``covariance``,
``cv`` and ``mc``. Command-line flags override file values.
"""

from __future__ import annotations

import configparser
import copy

from stgarch.core import CovarianceModel, GarchOrder
from stgarch.experiments import MCConfig
from stgarch.simulate import SurfaceConfig

__all__ = ["DEFAULTS", "Config", "load_config"]

DEFAULTS: dict[str, dict] = {
    "data": {"returns": "", "locations": "", "features": "", "targets": ""},
    "model": {"p": 1, "q": 1, "init": "unconditional", "predictor_init": "zero", "strict": False},
    "kernel": {"family": "uniform", "bandwidth": "auto"},
    "optimizer": {"n_starts": 3, "tol": 1e-9, "gtol": 1e-5, "maxiter": 1000, "margin": 1e-3},
    "covariance": {"family": "exponential", "smoothness": 0.5, "route": "direct"},
    "cv": {"k": 5, "score": "volatility", "max_missing": 0.05},
    "mc": {
        "replications": 20,
        "n1": "50,100",
        "n2": 50,
        "T": "200,300",
        "range": 0.5,
        "sill": 1.0,
        "nugget": 0.0,
        "burn_in": 500,
        "omega": "0.05,0.25",
        "alpha": "0.02,0.2",
        "beta": "0.35,0.75",
        "n_basis": 5,
        "fit_covariance": True,
    },
}


def _coerce(default, text: str):
    if isinstance(default, bool):
        v = text.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def _floats(text) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


class Config:
    """Effective configuration: defaults, then the file, then overrides."""

    def __init__(self, values: dict | None = None):
        self.values = copy.deepcopy(DEFAULTS) if values is None else values

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in self.values or key not in self.values[section]:
            raise KeyError(f"unknown config key [{section}] {key}")
        default = DEFAULTS[section][key]
        self.values[section][key] = _coerce(default, value) if isinstance(value, str) else value

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.values.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    # builders -------------------------------------------------------------

    def estimator_kwargs(self, seed: int = 0, n_jobs: int = 1) -> dict:
        bw = self.get("kernel", "bandwidth")
        return dict(
            p=self.get("model", "p"),
            q=self.get("model", "q"),
            kernel=self.get("kernel", "family"),
            bandwidth=None if str(bw).lower() == "auto" else float(bw),
            n_starts=self.get("optimizer", "n_starts"),
            tol=self.get("optimizer", "tol"),
            gtol=self.get("optimizer", "gtol"),
            maxiter=self.get("optimizer", "maxiter"),
            init=self.get("model", "init"),
            margin=self.get("optimizer", "margin"),
            covariance_family=self.get("covariance", "family"),
            smoothness=self.get("covariance", "smoothness"),
            kriging_route=self.get("covariance", "route"),
            predictor_init=self.get("model", "predictor_init"),
            strict=self.get("model", "strict"),
            seed=seed,
            n_jobs=n_jobs,
        )

    def surface_config(self) -> SurfaceConfig:
        mc = self.values["mc"]
        return SurfaceConfig(
            omega=_floats(mc["omega"]),
            alpha=_floats(mc["alpha"]),
            beta=_floats(mc["beta"]),
            n_basis=int(mc["n_basis"]),
        )

    def innovation_model(self) -> CovarianceModel:
        mc = self.values["mc"]
        return CovarianceModel(
            family=self.get("covariance", "family"),
            sill=float(mc["sill"]),
            range=float(mc["range"]),
            nugget=float(mc["nugget"]),
            smoothness=self.get("covariance", "smoothness"),
        )

    def mc_config(self, seed: int = 0, n_jobs: int = 1) -> MCConfig:
        mc = self.values["mc"]
        return MCConfig(
            replications=int(mc["replications"]),
            n1=_ints(mc["n1"]),
            n2=int(mc["n2"]),
            T=_ints(mc["T"]),
            seed=seed,
            model=self.innovation_model(),
            surface_config=self.surface_config(),
            order=GarchOrder(self.get("model", "p"), self.get("model", "q")),
            kernel=self.get("kernel", "family"),
            burn_in=int(mc["burn_in"]),
            n_starts=self.get("optimizer", "n_starts"),
            fit_covariance=bool(mc["fit_covariance"]),
            n_jobs=n_jobs,
        )


def load_config(path=None) -> Config:
    cfg = Config()
    if not path:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                cfg.set(section, key, value)
            except ValueError as exc:
                raise ValueError(f"{path}: [{section}] {key}: {exc}") from None
    return cfg
