"""Experiment configuration: JSON files binding every module's settings.

A config has nested sections -- dataset, density, importance, loss, sampler,
arch, optimizer, trainer, split, seeds, output_dir. Presets shipping with
the package cover the five benchmark datasets plus a self-contained
synthetic preset used by the demos and the acceptance suite.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .data import DatasetDescriptor, DatasetTable, load_csv
from .importance import ImportanceSpec
from .network import ArchitectureConfig, OptimizerConfig
from .synth import SyntheticSpec, descriptor_for, generate
from .trainer import TrainConfig

DESK_WIDTHS = (64, 16, 32, 16)
DESK_EMBED = 16
DESK_PATIENCE = 200
DESK_MAX_EPOCHS = 300
DESK_MAX_BATCH = 256


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as handle:
            return cls(raw=json.load(handle))

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        text = resources.files("cisir.presets").joinpath(f"{name}.json").read_text("utf-8")
        return cls(raw=json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def override(self, **kwargs) -> "ExperimentConfig":
        """New config with CLI-style overrides applied (None values are ignored)."""
        raw = copy.deepcopy(self.raw)
        mapping = {
            "lam": ("loss", "lambda"),
            "alpha_e": ("importance", "alpha_e"),
            "alpha_c": ("importance", "alpha_c"),
            "sampler": ("sampler", "kind"),
            "bandwidth": ("density", "bandwidth"),
            "output_dir": ("output_dir",),
            "seeds": ("seeds",),
        }
        for key, value in kwargs.items():
            if value is None:
                continue
            path = mapping[key]
            section = raw
            for part in path[:-1]:
                section = section.setdefault(part, {})
            section[path[-1]] = value
        return ExperimentConfig(raw=raw)

    # -- section accessors ------------------------------------------------

    def descriptor(self) -> DatasetDescriptor:
        ds = self.raw["dataset"]
        return DatasetDescriptor(
            name=ds.get("name", "dataset"),
            target_column=ds.get("target_column", "target"),
            target_transform=ds.get("target_transform", "identity"),
            lower_threshold=ds.get("lower_threshold"),
            upper_threshold=ds.get("upper_threshold"),
            rare_bins=frozenset(ds.get("rare_bins", [3])),
            rare_sign_filter=ds.get("rare_sign_filter"),
            drop_invalid=ds.get("drop_invalid", False),
        )

    def load_table(self, base_dir: Path | None = None) -> DatasetTable:
        ds = self.raw["dataset"]
        if "synthetic" in ds:
            spec = SyntheticSpec(**ds["synthetic"])
            return generate(spec, seed=ds.get("synthetic_seed", 0))
        path = Path(ds["csv_path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_csv(path, self.descriptor())

    def synthetic_descriptor_or_declared(self) -> DatasetDescriptor:
        ds = self.raw["dataset"]
        if "synthetic" in ds and "upper_threshold" not in ds:
            return descriptor_for(SyntheticSpec(**ds["synthetic"]), name=ds.get("name", "synthetic"))
        return self.descriptor()

    def train_config(self, paper_scale: bool = False) -> TrainConfig:
        arch_cfg = self.raw["arch"]
        widths = tuple(arch_cfg["hidden_widths"])
        embed = arch_cfg["embed_dim"]
        trainer_cfg = self.raw.get("trainer", {})
        patience = trainer_cfg.get("early_stop_patience", DESK_PATIENCE)
        max_epochs = trainer_cfg.get("max_epochs", DESK_MAX_EPOCHS)
        batch_size = self.raw.get("sampler", {}).get("batch_size", 64)
        if not paper_scale:
            widths, embed = DESK_WIDTHS, DESK_EMBED
            patience = min(patience, DESK_PATIENCE)
            max_epochs = min(max_epochs, DESK_MAX_EPOCHS)
            batch_size = min(batch_size, DESK_MAX_BATCH)
        arch = ArchitectureConfig(
            hidden_widths=widths,
            embed_dim=embed,
            dropout_rate=arch_cfg.get("dropout_rate", 0.0),
            leaky_slope=arch_cfg.get("leaky_slope", 0.01),
            use_batchnorm=arch_cfg.get("use_batchnorm", True),
        )
        opt_cfg = self.raw.get("optimizer", {})
        opt = OptimizerConfig(
            learning_rate=opt_cfg.get("learning_rate", 1e-3),
            weight_decay=opt_cfg.get("weight_decay", 0.0),
        )
        imp = self.raw.get("importance", {})
        loss_cfg = self.raw.get("loss", {})
        density_cfg = self.raw.get("density", {})
        return TrainConfig(
            arch=arch,
            opt=opt,
            lam=loss_cfg.get("lambda", 0.5),
            importance_e=ImportanceSpec(imp.get("family_e", "mdi"), imp.get("alpha_e", 1.0)),
            importance_c=ImportanceSpec(imp.get("family_c", "constant"), imp.get("alpha_c", 1.0)),
            sampler=self.raw.get("sampler", {}).get("kind", "ssb"),
            batch_size=batch_size,
            max_epochs=max_epochs,
            early_stop_patience=patience,
            lr_decay_factor=trainer_cfg.get("lr_decay_factor", 0.95),
            lr_plateau_epochs=trainer_cfg.get("lr_plateau_epochs", 50),
            sd_epsilon=loss_cfg.get("sd_epsilon", 1e-8),
            weighted_means=loss_cfg.get("weighted_means", True),
            val_metric=trainer_cfg.get("val_metric", "combined"),
            density_bins=density_cfg.get("n_bins", 100),
            density_epsilon=density_cfg.get("epsilon", 1e-3),
            bandwidth=density_cfg.get("bandwidth"),
            seeds=tuple(self.raw.get("seeds", [0, 1, 2, 3, 4])),
        )

    @property
    def test_fraction(self) -> float:
        return self.raw.get("split", {}).get("test_fraction", 1.0 / 3.0)

    @property
    def k_folds(self) -> int:
        return self.raw.get("split", {}).get("k_folds", 4)

    @property
    def split_seed(self) -> int:
        return self.raw.get("split", {}).get("seed", 0)

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "runs"))
