"""Local entropies, logarithmic S(E) fits, and temperature equality.

The diagonal reduced populations of each particle (in its own uncoupled box
modes) define a local entropy S = -sum p ln p.  Sampling quenches at many
total energies traces out S(Ebar) per side; a logarithmic fit S = a ln E + b
turns its slope into a per-sample temperature T = Ebar / a, and equilibrated
samples should come out with equal temperatures on both sides.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitRangeError, ThermoFilterError, ValidationError
from .twoparticle import CoupledSpectrum, box_mode_energy, diagonal_ensemble


def entropy(populations, *, leak_tol: float = 1e-3) -> float:
    """Shannon entropy -sum p ln p with 0 ln 0 = 0.

    The populations may undershoot a total of 1 by at most `leak_tol`
    (truncation leak); they are renormalized to an exact unit sum before the
    entropy is taken.  Negative entries beyond -1e-12 indicate an upstream
    bug and raise.
    """
    p = np.asarray(populations, dtype=float)
    if (p < -1e-12).any():
        raise ValidationError(f"negative population {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > leak_tol:
        raise ValidationError(f"populations sum to {total:.6f}, beyond leak tolerance")
    p = p / total
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())


@dataclass
class ThermoSample:
    """Equilibrium data of one quench initial condition."""

    m0: tuple[int, int]
    n0: tuple[int, int]
    e_total: float           # epsilon_l + epsilon_r of the initial product state
    epsilon_left: float
    epsilon_right: float
    ebar_left: float
    ebar_right: float
    s_left: float
    s_right: float
    leak: float


@dataclass
class TemperatureFit:
    side: str
    alpha: float
    beta: float
    temperatures: np.ndarray     # per accepted sample, Ebar / alpha
    residuals: np.ndarray

    def temperature(self, ebar) -> np.ndarray:
        return np.asarray(ebar) / self.alpha


def sample_equilibria(spec: CoupledSpectrum, initial_set, *,
                      trust_fraction: float = 0.8) -> list[ThermoSample]:
    """Diagonal-ensemble energies and entropies for many initial states."""
    basis = spec.basis
    out = []
    for m0, n0 in initial_set:
        ens = diagonal_ensemble(spec, m0, n0, trust_fraction=trust_fraction)
        eps_l = box_mode_energy(basis.left.lx, basis.left.ly, *m0)
        eps_r = box_mode_energy(basis.right.lx, basis.right.ly, *n0)
        out.append(ThermoSample(
            m0=tuple(int(v) for v in m0),
            n0=tuple(int(v) for v in n0),
            e_total=float(eps_l + eps_r),
            epsilon_left=float(eps_l),
            epsilon_right=float(eps_r),
            ebar_left=ens.ebar_left,
            ebar_right=ens.ebar_right,
            s_left=entropy(ens.rho_left),
            s_right=entropy(ens.rho_right),
            leak=ens.leak,
        ))
    return out


def filter_samples(samples: list[ThermoSample], *, initial_mismatch: float = 0.5,
                   final_mismatch: float = 0.1, leak_tol: float = 1e-3
                   ) -> list[ThermoSample]:
    """Keep samples with a large initial and a small final energy mismatch."""
    accepted = [
        s for s in samples
        if abs(s.epsilon_left - s.epsilon_right) > initial_mismatch * s.e_total
        and abs(s.ebar_left - s.ebar_right) < final_mismatch * s.e_total
        and s.leak < leak_tol
    ]
    if not accepted:
        raise ThermoFilterError(
            "no sample passed the equilibration criteria; relax "
            "initial_mismatch/final_mismatch or extend the sample set")
    return accepted


def fit_temperature(samples: list[ThermoSample], side: str) -> TemperatureFit:
    """Least-squares S = alpha ln(Ebar) + beta for one side."""
    if side not in ("left", "right"):
        raise ValidationError("side must be 'left' or 'right'")
    if len(samples) < 5:
        raise FitRangeError("need at least 5 samples for the entropy fit")
    ebar = np.array([s.ebar_left if side == "left" else s.ebar_right for s in samples])
    s_val = np.array([s.s_left if side == "left" else s.s_right for s in samples])
    if ebar.max() / ebar.min() < 1.2:
        raise FitRangeError(
            f"equilibrium energies span ratio {ebar.max() / ebar.min():.3f} < 1.2")
    alpha, beta = np.polyfit(np.log(ebar), s_val, 1)
    resid = s_val - (alpha * np.log(ebar) + beta)
    return TemperatureFit(side, float(alpha), float(beta), ebar / alpha, resid)


@dataclass
class TemperatureOffsets:
    e_total: np.ndarray
    t_left: np.ndarray
    t_right: np.ndarray
    dt_abs: np.ndarray
    dt_rel: np.ndarray


def temperature_offsets(fit_left: TemperatureFit, fit_right: TemperatureFit,
                        samples: list[ThermoSample]) -> TemperatureOffsets:
    """Per-sample temperature offsets, ordered by total energy.

    `samples` must already be filtered by the equilibration criteria; the
    fits are usually produced from the same filtered set.
    """
    if not samples:
        raise ThermoFilterError("no samples supplied; relax the filter thresholds")
    e = np.array([s.e_total for s in samples])
    tl = fit_left.temperature([s.ebar_left for s in samples])
    tr = fit_right.temperature([s.ebar_right for s in samples])
    order = np.argsort(e, kind="stable")
    e, tl, tr = e[order], tl[order], tr[order]
    dt = np.abs(tl - tr)
    return TemperatureOffsets(e, tl, tr, dt, dt / (0.5 * (tl + tr)))


def heat_consistency(samples: list[ThermoSample], fit: TemperatureFit,
                     side: str = "left", *, min_ratio: float = 1.5,
                     max_ratio: float = 3.0) -> float:
    """Median of finite-difference dS/dE against the fitted 1/T at midpoints.

    Individual sample pairs carry the full eigenstate-to-eigenstate entropy
    scatter, so the first-order relation dQ = T dS is checked statistically:
    over all sample pairs whose equilibrium energies differ by a factor in
    [min_ratio, max_ratio], the median of (S2-S1)/(E2-E1) divided by
    alpha/E_mid should sit near 1.
    """
    ebar = np.array([s.ebar_left if side == "left" else s.ebar_right
                     for s in samples])
    s_val = np.array([s.s_left if side == "left" else s.s_right
                      for s in samples])
    order = np.argsort(ebar, kind="stable")
    ebar, s_val = ebar[order], s_val[order]
    quotients = []
    for i in range(len(ebar)):
        for j in range(i + 1, len(ebar)):
            ratio = ebar[j] / ebar[i]
            if ratio < min_ratio:
                continue
            if ratio > max_ratio:
                break
            fd = (s_val[j] - s_val[i]) / (ebar[j] - ebar[i])
            mid = 0.5 * (ebar[i] + ebar[j])
            quotients.append(fd * mid / fit.alpha)
    if not quotients:
        raise ThermoFilterError("no sample pairs in the requested energy-ratio band")
    return float(np.median(quotients))


def binned_means(energies: np.ndarray, values: np.ndarray, bins: int):
    """Equal-count energy bins; returns (bin centers, bin means)."""
    order = np.argsort(energies, kind="stable")
    groups = np.array_split(order, bins)
    centers = np.array([energies[g].mean() for g in groups if len(g)])
    means = np.array([values[g].mean() for g in groups if len(g)])
    return centers, means


def select_initial_states(spec_basis, *, e_min: float, e_max: float,
                          initial_mismatch: float = 0.5,
                          limit: int | None = None):
    """Deterministic candidate initial states with a large energy mismatch."""
    basis = spec_basis
    eps_l = basis.left.energies[basis.pair_left]
    eps_r = basis.right.energies[basis.pair_right]
    total = eps_l + eps_r
    mask = (np.abs(eps_l - eps_r) > initial_mismatch * total) \
        & (total >= e_min) & (total <= e_max)
    idx = np.where(mask)[0]
    idx = idx[np.lexsort((basis.pair_right[idx], basis.pair_left[idx], total[idx]))]
    if limit is not None and len(idx) > limit:
        pick = np.linspace(0, len(idx) - 1, limit).astype(int)
        idx = idx[pick]
    return [
        (tuple(int(v) for v in basis.left.modes[basis.pair_left[i]]),
         tuple(int(v) for v in basis.right.modes[basis.pair_right[i]]))
        for i in idx
    ]
