"""Per-sample error tables with timings and an environment fingerprint."""

from __future__ import annotations

import json
import platform
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy
import torch

METHODS = ("fine", "gmsfem", "gmsfem-no")


def environment_fingerprint() -> dict:
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "machine": platform.machine(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "torch_threads": torch.get_num_threads(),
    }


@dataclass
class MethodErrors:
    l2: list = field(default_factory=list)
    h1: list = field(default_factory=list)

    @property
    def mean_l2(self) -> float:
        return float(np.mean(self.l2)) if self.l2 else float("nan")

    @property
    def mean_h1(self) -> float:
        return float(np.mean(self.h1)) if self.h1 else float("nan")

    def to_dict(self) -> dict:
        return {"l2": list(self.l2), "h1": list(self.h1), "mean_l2": self.mean_l2, "mean_h1": self.mean_h1}


@dataclass
class RunReport:
    config: dict
    methods: dict = field(default_factory=dict)  # name -> MethodErrors
    timings: dict = field(default_factory=dict)
    environment: dict = field(default_factory=environment_fingerprint)

    def record(self, method: str, l2: float, h1: float):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        entry = self.methods.setdefault(method, MethodErrors())
        entry.l2.append(float(l2))
        entry.h1.append(float(h1))

    def means(self) -> dict:
        return {m: {"l2": e.mean_l2, "h1": e.mean_h1} for m, e in self.methods.items()}

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "methods": {m: e.to_dict() for m, e in self.methods.items()},
            "timings": self.timings,
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        methods = {m: MethodErrors(list(e["l2"]), list(e["h1"])) for m, e in data["methods"].items()}
        return cls(data["config"], methods, data.get("timings", {}), data.get("environment", {}))

    def check_consistent(self, rtol: float = 0.0) -> bool:
        """Stored aggregates must recompute from the per-sample values."""
        for e in self.to_dict()["methods"].values():
            for key in ("l2", "h1"):
                if e[key] and not np.isclose(np.mean(e[key]), e[f"mean_{key}"], rtol=rtol, atol=0.0):
                    return False
        return True

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
