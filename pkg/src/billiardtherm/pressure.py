"""Pressure from parametric level derivatives and the Boyle-Mariotte test.

A geometry parameter (a side length or the scatterer radius) is swept over
five symmetric samples; each deformed geometry is solved on a topology-fixed
deformation of one reference mesh, so the discretization error varies
smoothly with the parameter and cancels in the level derivatives.  Cubic fits
through the tracked levels give dE/d(lambda) at the reference point; dividing
by -dA/d(lambda) normalizes the wall force to an energy per area so that
P * A can be compared with E directly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import LevelMatchingError, ValidationError
from .fem import assemble
from .eigensolve import lowest_eigenpairs

CLUSTER_BUFFER = 6
MAX_JOINT_CLUSTER = 6


@dataclass
class LevelCurve:
    """Tracked energy levels over a symmetric parameter sweep."""

    spec: geometry.DomainSpec
    param: str
    param_values: np.ndarray        # absolute parameter samples, ascending
    energies: np.ndarray            # (samples, levels) tracked branches
    coeffs: np.ndarray              # (4, levels) cubic fit in (value - ref)
    residuals: np.ndarray           # (levels,) max |fit - sample|
    flagged: np.ndarray             # (levels,) bool, unreliable fits
    clusters: list[list[int]]       # quasi-degenerate groups at the reference

    @property
    def n_levels(self) -> int:
        return self.energies.shape[1]

    @property
    def reference_value(self) -> float:
        mid = int(np.argmin(np.abs(self.param_values - self.param_values.mean())))
        return float(self.param_values[mid])

    def reference_energies(self) -> np.ndarray:
        return self.coeffs[0]

    def derivatives(self) -> np.ndarray:
        return self.coeffs[1]


@dataclass
class PressureRecord:
    level: int
    energy: float
    raw_derivative: float            # -dE/d(lambda)
    pressure: float                  # (-dE/dlambda) / (dA/dlambda)
    pa: float                        # pressure * area
    flagged: bool


@dataclass
class BoyleFit:
    slope: float
    intercept: float
    fluctuation: np.ndarray          # per-level |PA - fit| / |fit|
    windowed: np.ndarray             # sliding-window means of `fluctuation`
    window: int


def _reference_param(spec, param: str) -> float:
    try:
        return float(getattr(spec, param))
    except AttributeError:
        raise ValidationError(f"{type(spec).__name__} has no parameter '{param}'")


def _assign_cluster_branches(values: np.ndarray) -> np.ndarray:
    """Untangle branch values of one quasi-degenerate cluster.

    `values` holds the sorted cluster energies per sample (samples x size).
    Branches are propagated left to right by linear extrapolation and
    minimal-cost permutation matching, which follows smooth curves through an
    exact crossing at the reference geometry.
    """
    s, c = values.shape
    if c > MAX_JOINT_CLUSTER:
        raise LevelMatchingError(f"cluster of size {c} too large for joint matching")
    out = values.copy()
    for i in range(2, s):
        pred = 2.0 * out[i - 1] - out[i - 2]
        best_cost, best_perm = None, None
        for perm in itertools.permutations(range(c)):
            cost = float(np.abs(values[i, list(perm)] - pred).sum())
            if best_cost is None or cost < best_cost:
                best_cost, best_perm = cost, perm
        out[i] = values[i, list(best_perm)]
    return out


def level_curve(spec, param: str, dlam: float, n_levels: int, *,
                resolution: int, arc_points: int | None = None, order: int = 2,
                tol: float = 1e-8, samples: int = 5, flag_tol: float = 1e-3,
                cluster_tol: float = 1e-5, solver_kwargs: dict | None = None,
                energies_fn=None) -> LevelCurve:
    """Track the lowest levels across a symmetric sweep of one parameter.

    `energies_fn(offset) -> np.ndarray` may be supplied to reuse cached
    spectra; the default solves each deformed mesh directly.  `samples` must
    be odd and at least 5 so the cubic fit is overdetermined and the sweep
    contains the reference geometry.
    """
    if samples < 4:
        raise ValidationError("need at least 4 samples for an overdetermined cubic")
    if dlam <= 0:
        raise ValidationError("dlam must be positive")
    ref_value = _reference_param(spec, param)
    offsets = np.linspace(-dlam, dlam, samples)
    k_solve = n_levels + CLUSTER_BUFFER

    if energies_fn is None:
        mesh = geometry.build_mesh(spec, resolution, arc_points)
        if isinstance(mesh, tuple):
            raise ValidationError("level curves are defined for connected domains only")
        kwargs = solver_kwargs or {}

        def energies_fn(offset: float) -> np.ndarray:
            deformed = geometry.deform_mesh(mesh, spec, param, ref_value + offset)
            system = assemble(deformed, order=order)
            result = lowest_eigenpairs(system, k_solve, tol=tol,
                                       keep_vectors=False, **kwargs)
            return result.energies

    table = np.empty((samples, k_solve))
    for i, off in enumerate(offsets):
        e = np.asarray(energies_fn(float(off)), dtype=float)
        if len(e) < k_solve:
            raise ValidationError(
                f"energies_fn returned {len(e)} levels, need {k_solve}")
        table[i] = e[:k_solve]

    # Quasi-degenerate clusters at the sample nearest the reference point.
    # Discrete symmetry-related pairs split at the discretization-error
    # scale, so the joint-fit threshold sits well above the 1e-8 reporting
    # threshold of the eigensolver metadata.
    ref_idx = int(np.argmin(np.abs(offsets)))
    ref_row = table[ref_idx]
    clusters = []
    current = [0]
    for i in range(1, k_solve):
        if ref_row[i] - ref_row[i - 1] < cluster_tol * ref_row[i]:
            current.append(i)
        else:
            if len(current) > 1:
                clusters.append(current)
            current = [i]
    if len(current) > 1:
        clusters.append(current)

    tracked = table.copy()
    for group in clusters:
        block = table[:, group]
        try:
            tracked[:, group] = _assign_cluster_branches(block)
        except LevelMatchingError:
            pass  # keep value order; the residual flag will mark these

    coeffs = np.polynomial.polynomial.polyfit(offsets, tracked, 3)
    fit = np.polynomial.polynomial.polyval(offsets, coeffs).T
    residuals = np.abs(tracked - fit).max(axis=0)
    e_ref = coeffs[0]
    flagged = residuals > flag_tol * np.abs(e_ref)

    clusters = [g for g in clusters if g[0] < n_levels]
    return LevelCurve(
        spec=spec,
        param=param,
        param_values=ref_value + offsets,
        energies=tracked[:, :n_levels],
        coeffs=coeffs[:, :n_levels],
        residuals=residuals[:n_levels],
        flagged=flagged[:n_levels],
        clusters=clusters,
    )


def pressure_from_curve(curve: LevelCurve, spec=None) -> list[PressureRecord]:
    """Normalized pressure records for every tracked level."""
    spec = curve.spec if spec is None else spec
    dadl = geometry.area_derivative(spec, curve.param)
    if dadl == 0:
        raise ValidationError(f"dA/d({curve.param}) vanishes; pressure undefined")
    area = geometry.domain_area(spec)
    e_ref = curve.reference_energies()
    deriv = curve.derivatives()
    records = []
    for lvl in range(curve.n_levels):
        raw = -deriv[lvl]
        p = raw / dadl
        records.append(PressureRecord(
            level=lvl,
            energy=float(e_ref[lvl]),
            raw_derivative=float(raw),
            pressure=float(p),
            pa=float(p * area),
            flagged=bool(curve.flagged[lvl] or p <= 0),
        ))
    return records


def boyle_fit(records: list[PressureRecord], area: float | None = None,
              window: int = 25) -> BoyleFit:
    """Linear fit of P*A against E plus windowed relative fluctuations."""
    if len(records) < 100:
        raise ValidationError("boyle_fit needs at least 100 levels")
    e = np.array([r.energy for r in records])
    if area is None:
        pa = np.array([r.pa for r in records])
    else:
        pa = np.array([r.pressure * area for r in records])
    slope, intercept = np.polyfit(e, pa, 1)
    baseline = slope * e + intercept
    fluct = np.abs(pa - baseline) / np.abs(baseline)
    if len(fluct) >= window:
        windowed = np.convolve(fluct, np.ones(window) / window, mode="valid")
    else:
        windowed = fluct.copy()
    return BoyleFit(float(slope), float(intercept), fluct, windowed, window)


def isotropy_mismatch(records_x: list[PressureRecord],
                      records_y: list[PressureRecord]) -> np.ndarray:
    """Per-level |P_x - P_y| / mean(P) for two sweeps of the same geometry."""
    n = min(len(records_x), len(records_y))
    px = np.array([r.pressure for r in records_x[:n]])
    py = np.array([r.pressure for r in records_y[:n]])
    return np.abs(px - py) / (0.5 * (px + py))
