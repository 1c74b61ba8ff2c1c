"""Energy spectra and material attenuation tables."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError, InvariantViolationError
from .phantom import MATERIALS


@dataclass(frozen=True)
class EnergySpectrum:
    energies_kev: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if e.ndim != 1 or e.size < 1 or e.shape != w.shape:
            raise InvariantViolationError("spectrum needs >= 1 bin with matching energies/weights")
        if np.any(e <= 0) or np.any(w <= 0):
            raise InvariantViolationError("spectrum energies and weights must be positive")
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def mono(cls, energy_kev: float) -> "EnergySpectrum":
        return cls(np.array([energy_kev]), np.array([1.0]))

    def check_kvp(self, kvp: float) -> None:
        if self.energies_kev.max() > kvp + 1e-9:
            raise InvariantViolationError(f"spectrum extends beyond {kvp} kVp")


def triangular_spectrum(kvp: float, e_min_kev: float, n_bins: int, peak_fraction: float) -> EnergySpectrum:
    edges = np.linspace(e_min_kev, kvp, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    peak = peak_fraction * kvp
    w = np.where(centers <= peak, (centers - e_min_kev) / (peak - e_min_kev), (kvp - centers) / (kvp - peak))
    return EnergySpectrum(centers, w)


@dataclass(frozen=True)
class AttenuationTable:
    energies_kev: np.ndarray
    mu: dict  # material -> array over energies_kev, 1/mm

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=float)
        if np.any(np.diff(e) <= 0):
            raise InvariantViolationError("tabulated energies must increase strictly")
        mu = {k: np.asarray(v, dtype=float) for k, v in self.mu.items()}
        for k, v in mu.items():
            if v.shape != e.shape or np.any(v <= 0):
                raise InvariantViolationError(f"mu[{k}] must be positive and match the energy grid")
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "mu", mu)

    def __call__(self, material: str, energy_kev) -> np.ndarray:
        e = np.asarray(energy_kev, dtype=float)
        lo, hi = self.energies_kev[0], self.energies_kev[-1]
        if np.any(e < lo - 1e-9) or np.any(e > hi + 1e-9):
            raise InvariantViolationError(f"energy outside tabulated range [{lo}, {hi}] keV")
        return np.exp(np.interp(e, self.energies_kev, np.log(self.mu[material])))

    def check_physical(self) -> None:
        """Monotone in energy per material and cortical > trabecular > soft."""
        for name, v in self.mu.items():
            if np.any(np.diff(v) > 0):
                raise InvariantViolationError(f"mu[{name}] increases with energy")
        if all(m in self.mu for m in MATERIALS):
            c, t, s = (self.mu[m] for m in MATERIALS)
            if not (np.all(c > t) and np.all(t > s)):
                raise InvariantViolationError("expected mu(cortical) > mu(trabecular) > mu(soft)")


@dataclass(frozen=True)
class Physics:
    attenuation: AttenuationTable
    spectra: dict
    spectrum_model: dict

    def spectrum(self, kvp: float) -> EnergySpectrum:
        key = float(kvp)
        if key in self.spectra:
            return self.spectra[key]
        return triangular_spectrum(kvp, **self.spectrum_model)


def load_physics(path: Optional[Path] = None) -> Physics:
    """Read a physics YAML; ``None`` loads the packaged defaults."""
    try:
        if path is None:
            text = resources.files("pssf").joinpath("data/physics.yaml").read_text()
        else:
            text = Path(path).read_text()
        doc = yaml.safe_load(text)
        att = doc["attenuation"]
        table = AttenuationTable(np.array(att["energies_kev"]), att["mu_per_mm"])
        spectra = {}
        for kvp, bins in (doc.get("spectra") or {}).items():
            arr = np.asarray(bins, dtype=float)
            spec = EnergySpectrum(arr[:, 0], arr[:, 1])
            spec.check_kvp(float(kvp))
            spectra[float(kvp)] = spec
        model = dict(doc["spectrum_model"])
    except (OSError, KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load physics tables: {exc}") from exc
    table.check_physical()
    return Physics(table, spectra, model)
