from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Network hyper-parameters.

    ``group_sizes`` and ``contextual_counts`` list the CPA importance groups
    from least to most important, so the defaults compress the 32 least
    important points into 4 contextual points and the 32 most important into 16.
    """

    n_points: int = 128            # N, seeds after the backbone
    channels: int = 128            # C
    layers: int = 2                # L
    heads: int = 4                 # H
    k_train: int = 2
    k_test: int = 6
    groups: int = 3                # G
    group_sizes: tuple[int, ...] = (32, 64, 32)
    contextual_counts: tuple[int, ...] = (4, 32, 16)
    n_input: int = 1024
    dropout_rate: float = 0.1
    loss_weights: tuple[float, ...] = (10.0, 0.2, 1.0, 1.0, 1.0)
    use_om: bool = True
    use_bea: bool = True
    use_cpa: bool = True
    backbone_k: int = 16
    expansion_k: int = 8
    expansion_ratio: int = 8
    detach_memory: bool = True

    def __post_init__(self):
        self.group_sizes = tuple(int(v) for v in self.group_sizes)
        self.contextual_counts = tuple(int(v) for v in self.contextual_counts)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        self.validate()

    def validate(self):
        if min(self.n_points, self.channels, self.layers, self.heads, self.k_train, self.k_test, self.n_input) < 1:
            raise ConfigError("sizes must be positive")
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.use_bea and self.heads % 2:
            raise ConfigError("BEA splits the heads into two branches; heads must be even")
        if self.use_bea and (self.channels // 2) % (self.heads // 2):
            raise ConfigError("channels/2 must be divisible by heads/2")
        if self.groups != len(self.group_sizes) or self.groups != len(self.contextual_counts):
            raise ConfigError("groups must match the lengths of group_sizes and contextual_counts")
        if sum(self.group_sizes) != self.n_points:
            raise ConfigError(f"group_sizes sum to {sum(self.group_sizes)}, expected n_points={self.n_points}")
        for g, u in zip(self.group_sizes, self.contextual_counts):
            if u < 1 or g % u:
                raise ConfigError(f"group of {g} points cannot be split into {u} equal clusters")
        if self.n_points % self.expansion_ratio:
            # every memory fill k must give an integer k*N/ratio
            raise ConfigError(f"n_points must be divisible by {self.expansion_ratio}")
        if self.n_points > self.n_input:
            raise ConfigError("n_points cannot exceed n_input")
        if len(self.loss_weights) != 5:
            raise ConfigError("loss_weights needs five entries")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def n_contextual(self) -> int:
        return sum(self.contextual_counts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# fields that do not change the parameter set or its meaning
RUNTIME_FIELDS = ("k_train", "k_test", "dropout_rate", "loss_weights", "detach_memory")


def architecture(cfg: ModelConfig) -> dict:
    d = cfg.to_dict()
    for k in RUNTIME_FIELDS:
        d.pop(k)
    return d
