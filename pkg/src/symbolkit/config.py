"""Pipeline configuration: one declarative JSON file, environment
overrides, and the config hashing that content-addresses stage outputs.

Precedence, lowest to highest: built-in defaults, config file, SYMBOLKIT_*
environment variables, command-line flags.  Every random decision in the
pipeline traces back to seeds stored here; nothing defaults to the clock.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os

ENV_PREFIX = "SYMBOLKIT_"

DEFAULTS: dict = {
    "bundle": None,
    "out": "runs",
    "layers": None,  # null: every layer in the bundle manifest
    "seed": 0,
    "threads": 1,
    "embed": {
        "n_neighbors": 50,
        "min_dist": 0.1,
        "n_components": 3,
        "metric": "euclidean",
        "n_epochs": None,
        "negative_sample_rate": 5,
        "exact_knn_max": 20000,
        "seed": None,  # null: master seed
    },
    "cluster": {
        "mode": "xmeans",  # or "kmeans"
        "k_init": 10,
        "k_max": 1000,
        "fixed_k": None,
        "seed": None,
    },
    "predict": {"split": "test"},
    "ess": {"class_source": "layer4_prediction", "layers": None, "split": "test"},
    "ood": {"layers": None},  # null: all analyzed layers except the deepest
    "adv": {},
    "templearn": {"resamples": 100, "seed": None},
    "report": {"format": "both"},
    "synth": {
        "classes": 30,
        "rois_per_class": 60,
        "clusters_per_class": 3,
        "channels": 64,
        "sigma": 0.05,
        "layers": [1],
        "test_fraction": 0.25,
        "ood_classes": 0,
        "ood_rois_per_class": 0,
        "adv_rois_per_class": 0,
        "adv_out_of_set_fraction": 0.0,
        "model_error_rate": 0.0,
        "shuffle_train_labels": False,
        "feature_size": 6,
        "input_size": 96,
        "seed": None,
    },
}


class ConfigError(Exception):
    pass


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and not isinstance(value, dict) and value is not None:
            raise ConfigError(f"config key {where!r} must be a section")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _env_overrides(environ=None) -> dict:
    env = os.environ if environ is None else environ
    sections = {k for k, v in DEFAULTS.items() if isinstance(v, dict)}
    overrides: dict = {}
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        section = next((s for s in sections if rest.startswith(s + "_")), None)
        if section:
            overrides.setdefault(section, {})[rest[len(section) + 1:]] = value
        else:
            overrides[rest] = value
    return overrides


class PipelineConfig:
    """Resolved configuration; `data` is a plain nested dict."""

    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def load(cls, config_file=None, cli_overrides: dict | None = None,
             environ=None) -> "PipelineConfig":
        data = copy.deepcopy(DEFAULTS)
        if config_file is not None:
            with open(config_file, encoding="utf-8") as f:
                try:
                    file_data = json.load(f)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"{config_file}: not valid JSON ({e})") from None
            data = _merge(data, file_data)
        data = _merge(data, _env_overrides(environ))
        if cli_overrides:
            data = _merge(data, cli_overrides)
        cfg = cls(data)
        cfg._resolve_seeds()
        return cfg

    def _resolve_seeds(self):
        master = self.data["seed"]
        if master is None:
            raise ConfigError("seed must be an explicit integer")
        for section in ("embed", "cluster", "templearn", "synth"):
            if self.data[section].get("seed") is None:
                self.data[section]["seed"] = master

    def __getitem__(self, key):
        return self.data[key]

    def section(self, name: str) -> dict:
        return self.data[name]

    def require_bundle(self) -> str:
        bundle = self.data["bundle"]
        if not bundle:
            raise ConfigError("no bundle configured (set 'bundle' or --bundle)")
        return bundle

    def validate_paths(self, need_bundle: bool = True):
        if need_bundle and not os.path.isdir(self.require_bundle()):
            raise ConfigError(f"bundle directory {self.data['bundle']!r} does not exist")


def config_hash(subset: dict) -> str:
    """Stable 12-hex digest of a config subset (content address)."""
    canon = json.dumps(subset, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
