"""Named parameter sets for the experiment runner."""

from __future__ import annotations

import numpy as np

from .spatial import CoefficientSet, Grid

# Each preset fixes geometry, weight and default sizes.  Values are plain
# strings/numbers so they can be merged with INI configs and CLI flags.
PRESETS = {
    "remark-rm2": {
        "description": "a = 1 on (0,1), phi = 4|x+1|^2, T = 3, zero lower-order terms",
        "L": 1.0, "a": "1", "x0": -1.0, "alpha": 4.0, "T": 3.0, "K": 12, "M": 3,
        "lam": 1.0, "c0": 0.1, "c1": 0.5, "profile": "zero",
    },
    "zero-coefficients": {
        "description": "a = 1 on (0,1), phi = 4|x+1|^2, T = 9 (condition 2 admissible), zero lower-order terms",
        "L": 1.0, "a": "1", "x0": -1.0, "alpha": 4.0, "T": 9.0, "K": 12, "M": 3,
        "lam": 1.0, "c0": 0.2, "c1": 0.81, "profile": "zero",
    },
    "smooth-coefficients": {
        "description": "a = 1 + x/4 on (0,1), smooth nonzero a1..a5, T = 3",
        "L": 1.0, "a": "1,0.25", "x0": -1.0, "alpha": 4.0, "T": 3.0, "K": 12, "M": 3,
        "lam": 1.0, "c0": 0.1, "c1": 0.5, "profile": "smooth",
    },
}

PROFILES = ("zero", "smooth")


def profile_coefficients(grid: Grid, name: str) -> CoefficientSet:
    if name == "zero":
        return CoefficientSet(grid)
    if name == "smooth":
        s = np.sin(np.pi * grid.x / grid.L)
        return CoefficientSet(grid, a1=0.2 * np.cos(np.pi * grid.x / grid.L), a2=0.3, a3=0.4 * s,
                              a4=0.25, a5=0.2 * s**2)
    raise KeyError(f"unknown coefficient profile {name!r}; choose from {', '.join(PROFILES)}")


def list_presets() -> str:
    """Sorted text table of the available presets."""
    names = sorted(PRESETS)
    width = max(len(n) for n in names)
    return "\n".join(f"{n.ljust(width)}  {PRESETS[n]['description']}" for n in names) + "\n"
