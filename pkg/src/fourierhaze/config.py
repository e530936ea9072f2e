"""Run configuration: one YAML file with fixed sections and keys."""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class DataSection:
    source_dir: str | None = None
    image_size: int = 64
    n_pairs: int = 200
    seed: int = 1
    t_min: float = 0.3
    t_max: float = 0.8
    uniform: bool = False


@dataclass
class DiffusionSection:
    T: int = 1000
    S: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.02
    beta_fir: float = 0.1
    use_fir: bool = True
    clip_denoised: bool = True
    fir_max_t: int | None = None


@dataclass
class ModelSection:
    hidden: int = 16
    embed: int = 32


@dataclass
class TrainSection:
    phase1_iterations: int = 2000
    phase2_iterations: int = 500
    lr: float = 2e-5
    batch: int = 4
    ema_decay: float = 0.999
    crops_per_image: int = 16
    msssim_form: str = "as_written"
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class GCLSection:
    channels: int = 8
    fusion_channels: int = 16
    iterations: int = 2000
    lr: float = 1e-3
    batch: int = 8
    seed: int = 0


@dataclass
class SampleSection:
    patch: int = 64
    stride: int | None = 32
    seed: int = 0


@dataclass
class EvalSection:
    psnr: bool = True
    ssim: bool = True
    ciede2000: bool = True
    sam: bool = True


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    gcl: GCLSection = field(default_factory=GCLSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self):
        return asdict(self)

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    def validate(self):
        d, df, m, t, g, s = self.data, self.diffusion, self.model, self.train, self.gcl, self.sample
        checks = [
            (d.n_pairs >= 1, "data.n_pairs must be >= 1"),
            (d.image_size >= 16, "data.image_size must be >= 16"),
            (0.0 < d.t_min <= d.t_max <= 1.0, "data.t_min/t_max must satisfy 0 < t_min <= t_max <= 1"),
            (df.T >= 1, "diffusion.T must be >= 1"),
            (1 <= df.S <= df.T and df.T % df.S == 0, "diffusion.S must divide diffusion.T"),
            (0.0 < df.beta_start <= df.beta_end < 1.0, "diffusion betas must satisfy 0 < start <= end < 1"),
            (0.0 <= df.beta_fir <= 1.0, "diffusion.beta_fir must lie in [0, 1]"),
            (df.fir_max_t is None or df.fir_max_t >= 0, "diffusion.fir_max_t must be >= 0"),
            (m.hidden >= 1, "model.hidden must be >= 1"),
            (m.embed >= 2 and m.embed % 2 == 0, "model.embed must be a positive even number"),
            (t.phase1_iterations >= 0 and t.phase2_iterations >= 0, "train iteration counts must be >= 0"),
            (t.lr > 0, "train.lr must be positive"),
            (t.batch >= 1, "train.batch must be >= 1"),
            (0.0 <= t.ema_decay <= 1.0, "train.ema_decay must lie in [0, 1]"),
            (t.crops_per_image >= 1, "train.crops_per_image must be >= 1"),
            (t.msssim_form in ("as_written", "canonical"), "train.msssim_form must be as_written or canonical"),
            (t.checkpoint_every >= 0, "train.checkpoint_every must be >= 0"),
            (g.channels >= 1 and g.fusion_channels >= 1, "gcl channel counts must be >= 1"),
            (g.iterations >= 0 and g.batch >= 1 and g.lr > 0, "gcl iterations/batch/lr out of range"),
            (s.patch >= 1, "sample.patch must be >= 1"),
            (s.stride is None or 1 <= s.stride <= s.patch, "sample.stride must lie in [1, patch]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self


def _build_section(cls, values, section):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section [{section}] must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if value is not None and default is not None:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{section}.{key} must be true/false, got {value!r}")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
                value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    sections = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(raw) - set(sections))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    built = {
        name: _build_section(type(getattr(RunConfig(), name)), raw.get(name), name) for name in sections
    }
    return RunConfig(**built).validate()


def load_config(path=None):
    """Read and validate a YAML config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig().validate()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return config_from_dict(raw)
