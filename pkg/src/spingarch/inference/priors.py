from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorSpec:
    """Prior families shared by all fitted variants.

    Location coefficients (``alpha``, ``beta``) are Normal(location_mean,
    location_sd^2); standard deviations ``sigma``, ``sigma_sp`` and
    ``sigma_ind`` are half-Normal(0, scale_sd^2); ``(eta, kappa)`` is uniform
    on the triangle ``eta, kappa >= 0, eta + kappa < 1``; ``zeta`` is
    uniform over the admissible interval for the standard CAR and fixed at
    ``zeta_fixed`` for the degree-weighted CAR.
    """

    location_mean: float = 0.0
    location_sd: float = 10.0
    scale_sd: float = 5.0
    zeta_fixed: float = 0.999

    def __post_init__(self):
        if not self.location_sd > 0 or not self.scale_sd > 0:
            raise ValueError("prior scales must be positive")
        if not -1.0 < self.zeta_fixed < 1.0:
            raise ValueError("zeta_fixed must lie in (-1, 1)")

    @classmethod
    def from_overrides(cls, overrides) -> "PriorSpec":
        """Build from ``key=value`` strings or a mapping."""
        if isinstance(overrides, dict):
            items = overrides.items()
        else:
            items = []
            for item in overrides or ():
                if "=" not in item:
                    raise ValueError(f"prior override {item!r} is not key=value")
                key, value = item.split("=", 1)
                items.append((key.strip(), value.strip()))
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in items:
            if key not in known:
                raise ValueError(f"unknown prior setting {key!r}; expected one of {sorted(known)}")
            kwargs[key] = float(value)
        return replace(cls(), **kwargs)

    # log densities and their derivatives

    def location_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        zsc = (x - self.location_mean) / self.location_sd
        return float(np.sum(-0.5 * zsc**2 - 0.5 * LOG_2PI - np.log(self.location_sd)))

    def location_grad(self, x):
        return -(np.asarray(x, dtype=float) - self.location_mean) / self.location_sd**2

    def scale_logpdf(self, sigma: float) -> float:
        if sigma <= 0:
            return -np.inf
        zsc = sigma / self.scale_sd
        return float(np.log(2.0) - 0.5 * zsc**2 - 0.5 * LOG_2PI - np.log(self.scale_sd))

    def scale_grad(self, sigma: float) -> float:
        return -sigma / self.scale_sd**2

    @staticmethod
    def triangle_logpdf(eta: float, kappa: float) -> float:
        if eta < 0 or kappa < 0 or eta + kappa >= 1:
            return -np.inf
        return float(np.log(2.0))
