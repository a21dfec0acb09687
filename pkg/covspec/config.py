"""
Experiment configuration: every knob of every module in one yaml tree.

The sections live next to the code they parameterize; this module aggregates them, applies
`--override key=value` edits and the COVSPEC_SEED environment variable, and validates the
result.
"""
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import os
import yaml
from dataclasses_json import dataclass_json

from covspec.common import digest, digest64
from covspec.comm.payload import ChannelConfig, PayloadConfig
from covspec.engine.params import DraftingConfig
from covspec.errors import ConfigError, InputError
from covspec.harness.metrics import LatencyModel, PricingConfig
from covspec.models import ModelConfig, VisualConfig
from covspec.tokensel import SelectionConfig
from covspec.transport.sockets import TransportConfig

SEED_ENV = 'COVSPEC_SEED'

# knobs set to the reference deployment, with where each value comes from;
# everything else is a heuristic default
REFERENCE_SETUP = {
    'channel.bandwidth_hz': 'reference setup: 5 MHz wireless uplink',
    'channel.snr_db': 'reference setup: 10 dB link quality',
    'visual.num_tokens': 'reference setup: 768 visual tokens from the vision encoder',
    'selection.B_vis': 'reference setup: visual token budget of 64',
    'drafting.max_new_tokens': 'reference setup: generation cap of 1024 tokens',
    'pricing.price_in': 'reference setup: edge API price per million input tokens',
    'pricing.price_out': 'reference setup: edge API price per million output tokens',
    'payload.b_logit': 'reference setup: float16 logits on the uplink',
    'payload.b_logit_tar': 'reference setup: float16 target logits on the downlink',
}

# the hello hash ignores where the session runs
DIGEST_EXCLUDED = ('transport',)


@dataclass_json
@dataclass
class ExperimentConfig:
    seed: int = 0
    episodes: int = 1  # consecutive seeds starting at `seed`
    visual: VisualConfig = field(default_factory=VisualConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    drafting: DraftingConfig = field(default_factory=DraftingConfig)
    payload: PayloadConfig = field(default_factory=PayloadConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    latency: LatencyModel = field(default_factory=LatencyModel)
    pricing: PricingConfig = field(default_factory=PricingConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)

    def validate(self) -> "ExperimentConfig":
        """
        checks the constraints that span sections
        """
        try:
            if not 0 <= self.seed < 2**64 - self.episodes:
                raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
            if self.episodes < 1:
                raise ValueError(f"episodes must be positive, got {self.episodes}")
            if self.model.vocab_size < 2:
                raise ValueError(f"vocab_size must be at least 2, got {self.model.vocab_size}")
            if not 0.0 <= self.model.agreement <= 1.0:
                raise ValueError(f"agreement must be in [0, 1], got {self.model.agreement}")
            eos = self.drafting.eos_token
            if eos is not None and not 0 <= eos < self.model.vocab_size:
                raise ValueError(f"eos_token {eos} is outside the vocabulary")
            if self.visual.num_planted > self.visual.num_tokens:
                raise ValueError(f"cannot plant {self.visual.num_planted} of {self.visual.num_tokens} tokens")
            self.selection.resolve(self.visual.num_tokens, self.visual.dim, self.visual.num_layers)
            self.channel.capacity()
        except (ValueError, InputError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_yaml(self) -> str:
        return yaml.dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        d = self.to_dict()
        for key in DIGEST_EXCLUDED:
            d.pop(key)
        return digest(d)

    def hello_hash(self) -> int:
        d = self.to_dict()
        for key in DIGEST_EXCLUDED:
            d.pop(key)
        return digest64(d)

    def for_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d['seed'] = seed
        d['episodes'] = 1
        return from_dict(d)

    @staticmethod
    def from_yaml_file(yaml_file: Path, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        try:
            with Path(yaml_file).open() as f:
                param_dict = yaml.load(f, Loader=yaml.SafeLoader)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {yaml_file}: {exc}") from exc
        if param_dict is None:  # empty file
            param_dict = {}
        return load(param_dict, overrides)


def _check_keys(cls, d: Any, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {d!r}")
    known = {f.name: f for f in fields(cls)}
    for key, value in d.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key}")
        if is_dataclass(known[key].type):
            _check_keys(known[key].type, value, f"{path}{key}.")


def _coerce_floats(obj):
    """
    ints given for float knobs become floats, so equal configs hash equally
    """
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            _coerce_floats(value)
        elif f.type is float and isinstance(value, int) and not isinstance(value, bool):
            setattr(obj, f.name, float(value))


def from_dict(d: Dict[str, Any]) -> ExperimentConfig:
    _check_keys(ExperimentConfig, d, '')
    try:
        config = ExperimentConfig.from_dict(d)
    except (ValueError, TypeError, KeyError, InputError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    _coerce_floats(config)
    return config.validate()


def knob_paths() -> List[str]:
    """
    dotted paths of every leaf knob
    """
    paths = []

    def walk(cls, prefix: str):
        for f in fields(cls):
            if is_dataclass(f.type):
                walk(f.type, f"{prefix}{f.name}.")
            else:
                paths.append(prefix + f.name)
    walk(ExperimentConfig, '')
    return paths


def resolve_knob(key: str) -> str:
    """
    the dotted path of a knob given by dotted path or by a field name unique across sections
    """
    paths = knob_paths()
    if key in paths:
        return key
    matches = [p for p in paths if p.split('.')[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise ConfigError(f"knob {key} is ambiguous: {', '.join(matches)}")
    raise ConfigError(f"unknown knob {key}")


def apply_override(d: Dict[str, Any], override: str):
    key, sep, text = override.partition('=')
    if not sep:
        raise ConfigError(f"override {override!r} is not of the form key=value")
    path = resolve_knob(key.strip()).split('.')
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse the value of override {override!r}: {exc}") from exc
    node = d
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = value


def load(param_dict: Dict[str, Any], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    defaults, then the given dict, then the overrides, then COVSPEC_SEED
    """
    _check_keys(ExperimentConfig, param_dict, '')
    d = ExperimentConfig().to_dict()
    for section, value in param_dict.items():
        if isinstance(value, dict) and isinstance(d.get(section), dict):
            d[section].update(value)
        else:
            d[section] = value
    for override in overrides:
        apply_override(d, override)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            d['seed'] = int(seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={seed!r} is not an integer") from exc
    return from_dict(d)


def provenance(path: str) -> str:
    return REFERENCE_SETUP.get(path, 'heuristic')


def annotated_yaml(config: Optional[ExperimentConfig] = None) -> str:
    """
    the config as yaml with the provenance of every knob as a trailing comment
    """
    config = config if config is not None else ExperimentConfig()
    d = config.to_dict()
    lines = []
    for key, value in d.items():
        if isinstance(value, dict):
            lines.append(f"{key}:")
            for sub_key, sub_value in value.items():
                line = yaml.safe_dump({sub_key: sub_value}, default_flow_style=True, width=1000)
                lines.append(f"  {line.strip()[1:-1]}  # {provenance(f'{key}.{sub_key}')}")
        else:
            line = yaml.safe_dump({key: value}, default_flow_style=True, width=1000)
            lines.append(f"{line.strip()[1:-1]}  # {provenance(key)}")
    return '\n'.join(lines) + '\n'
