"""Model and optimizer configuration, loaded from JSON with strict key checking."""

import json
from dataclasses import asdict, dataclass, field, fields

from .kernel import SUBKERNEL_KINDS


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """All knobs of a training run.

    ``subkernels`` lists one ``{"kind": ..., "rank": R_q}`` entry per
    subkernel.  ``grid_size`` gives the node count per input dimension; a
    single entry is reused for every dimension.
    """

    subkernels: list = field(default_factory=lambda: [{"kind": "rbf", "rank": 1}])
    grid_size: list = field(default_factory=lambda: [64])
    num_probes: int = 10
    seed: int = 0
    minres_tol: float = 1e-6
    minres_max_iter: int = None
    rho: float = 0.95
    delta: float = 1e-6
    stop_fraction: float = 0.2
    stop_budget: int = 5
    max_iterations: int = 500
    representation: str = "auto"
    noise_floor: float = 1e-8

    def __post_init__(self):
        self.validate()

    @property
    def ranks(self):
        return [int(s["rank"]) for s in self.subkernels]

    @property
    def kinds(self):
        return tuple(s.get("kind", "rbf") for s in self.subkernels)

    def grid_shape(self, input_dim):
        sizes = list(self.grid_size)
        if len(sizes) == 1:
            sizes = sizes * input_dim
        if len(sizes) != input_dim:
            raise ConfigError("grid_size has {} entries for {}-D inputs".format(len(sizes), input_dim))
        return sizes

    def validate(self):
        if isinstance(self.grid_size, int):
            self.grid_size = [self.grid_size]
        if not self.subkernels:
            raise ConfigError("need at least one subkernel")
        for s in self.subkernels:
            if not isinstance(s, dict) or set(s) - {"kind", "rank"} or "rank" not in s:
                raise ConfigError("subkernel entries need keys kind, rank; got {!r}".format(s))
            if s.get("kind", "rbf") not in SUBKERNEL_KINDS:
                raise ConfigError("unknown subkernel kind {!r}".format(s.get("kind")))
            if int(s["rank"]) < 0:
                raise ConfigError("subkernel rank must be nonnegative")
        if not self.grid_size or len(self.grid_size) > 2 or any(int(m) < 8 for m in self.grid_size):
            raise ConfigError("grid_size needs 1 or 2 entries, each >= 8")
        checks = [
            (self.num_probes >= 1, "num_probes must be >= 1"),
            (self.minres_tol > 0, "minres_tol must be positive"),
            (self.minres_max_iter is None or self.minres_max_iter >= 1, "minres_max_iter must be >= 1"),
            (0 <= self.rho < 1, "rho must lie in [0, 1)"),
            (self.delta > 0, "delta must be positive"),
            (0 < self.stop_fraction < 1, "stop_fraction must lie in (0, 1)"),
            (self.stop_budget >= 1, "stop_budget must be >= 1"),
            (self.max_iterations >= 0, "max_iterations must be >= 0"),
            (self.representation in ("auto", "sum", "bt", "slfm"), "representation must be auto|sum|bt|slfm"),
            (self.noise_floor > 0, "noise_floor must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError("unknown config keys: {}".format(", ".join(unknown)))
        return cls(**d)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError("{}: invalid JSON: {}".format(path, e)) from None
    if not isinstance(data, dict):
        raise ConfigError("{}: config must be a JSON object".format(path))
    return ModelConfig.from_dict(data)
