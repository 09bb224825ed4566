"""Run configuration: one flat dataclass, two presets, key=value config files.

The "toy" preset is the set of field defaults below: a ~1M-parameter model
and 10k-sentence corpora sized for a desk run. The "paper" preset restores
the reference hyperparameters (bottleneck 64, lr 5e-5, batch 8, beam 4);
it is far too slow for a from-scratch CPU run but keeps the original
operating point expressible.

Config files are flat `key=value` lines. A `preset=<name>` line is applied
first wherever it appears, then the remaining keys override it in file
order, so files inherit from a preset by naming it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .decoding import DecodeConfig
from .model import ModelConfig
from .training import Hyper


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy"
    # model
    vocab_size: int = 134
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    adapter_bottleneck: int = 16
    max_len: int = 64
    seed: int = 0
    dropout: float = 0.0
    # corpora
    n_task: int = 10_000
    n_style: int = 10_000
    mask_rate: float = 0.15
    delete_rate: float = 0.10
    tasks: tuple[str, ...] = ("headline", "story")
    styles: tuple[str, ...] = ("s1", "s2", "s3")
    # training
    lr: float = 1e-3
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    step1_epochs: int = 5
    step2_epochs: int = 5
    patience: int = 2
    mode: str = "inverse-para"  # adapter pretraining task; "denoise" is the -para ablation
    trainable: str = "enc"  # stage-2 selector
    # decoding
    beam_size: int = 4
    max_out_len: int = 32
    length_penalty: float = 0.0
    # metrics
    lm_order: int = 2
    lm_k: float = 0.1

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size, d_model=self.d_model, n_heads=self.n_heads,
            d_ffn=self.d_ffn, n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers, adapter_bottleneck=self.adapter_bottleneck,
            max_len=self.max_len, seed=self.seed, dropout=self.dropout)

    def hyper(self, epochs: int | None = None, seed: int | None = None,
              log_path: Path | None = None) -> Hyper:
        return Hyper(lr=self.lr, batch_size=self.batch_size,
                     epochs=self.step1_epochs if epochs is None else epochs,
                     patience=self.patience, beta1=self.beta1, beta2=self.beta2,
                     adam_eps=self.adam_eps, weight_decay=self.weight_decay,
                     seed=self.seed if seed is None else seed, log_path=log_path)

    def decode_config(self, beam_size: int | None = None) -> DecodeConfig:
        return DecodeConfig(beam_size=beam_size or self.beam_size,
                            max_len=self.max_out_len,
                            length_penalty=self.length_penalty)


PRESETS: dict[str, dict] = {
    "toy": {},
    "paper": {"adapter_bottleneck": 64, "lr": 5e-5, "batch_size": 8, "beam_size": 4},
}


def apply_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r} (choose from {sorted(PRESETS)})")
    return replace(RunConfig(preset=name), **PRESETS[name])


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind.startswith("tuple"):
        return tuple(part for part in raw.split(",") if part)
    return raw


def parse_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    unknown = set(items) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    coerced = {k: _coerce(k, v) for k, v in items.items() if k != "preset"}
    return replace(cfg, **coerced)


def load_config(path: Path) -> RunConfig:
    """Flat key=value file; a preset line is applied before the other keys."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    cfg = apply_preset(items.get("preset", "toy"))
    return parse_overrides(cfg, items)


def save_config(cfg: RunConfig, path: Path) -> None:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
