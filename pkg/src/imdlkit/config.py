"""Run-configuration resolution: flags > file > defaults, with provenance."""

from __future__ import annotations

import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


def load_config_file(path) -> dict:
    path = os.fspath(path)
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class RunConfig:
    """Fully resolved configuration with per-field provenance."""

    def __init__(self, values: dict, provenance: dict):
        self.values = values
        self.provenance = provenance

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def to_dict(self) -> dict:
        return {
            "values": self.values,
            "provenance": self.provenance,
        }

    @classmethod
    def resolve(cls, defaults: dict, file_values: dict | None, flag_values: dict):
        """Merge sources; unknown file keys are rejected early."""
        file_values = file_values or {}
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys in file: {sorted(unknown)}")
        values, prov = {}, {}
        for key, default in defaults.items():
            if key in flag_values and flag_values[key] is not None:
                values[key], prov[key] = flag_values[key], "flag"
            elif key in file_values:
                values[key], prov[key] = file_values[key], "file"
            else:
                values[key], prov[key] = default, "default"
        return cls(values, prov)

    def write(self, run_dir) -> None:
        with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
