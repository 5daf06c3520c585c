"""Experiment orchestration: geometry -> FEM -> spectra -> observables -> CSV.

Every run function takes a RunConfig, writes its delimited outputs plus a
manifest into the output directory, and returns the manifest.  Heavy
intermediates (billiard spectra per deformed geometry, the coupled
two-particle eigensystem) are cached content-addressed so that repeated CLI
invocations and batch sampling reuse them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem, geometry, pressure, thermo, twoparticle
from .cache import ArtifactCache
from .config import RunConfig, RunManifest, StageTimer
from .eigensolve import lowest_eigenpairs, write_spectrum_csv, write_vectors_text
from .errors import ConfigError, StageError


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return f"{v:.17g}" if np.isfinite(v) else "nan"


def write_csv(path: Path, header: list[str], rows, manifest: RunManifest) -> Path:
    with path.open("w") as fh:
        fh.write(f"# manifest: {manifest.filename}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    manifest.outputs.append(path.name)
    return path


def _stage(manifest: RunManifest, name: str):
    return _GuardedStage(StageTimer(manifest)(name), name)


class _GuardedStage:
    def __init__(self, timer_ctx, name):
        self.timer_ctx = timer_ctx
        self.name = name

    def __enter__(self):
        return self.timer_ctx.__enter__()

    def __exit__(self, exc_type, exc, tb):
        self.timer_ctx.__exit__(exc_type, exc, tb)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def new_manifest(config: RunConfig) -> RunManifest:
    return RunManifest(config.config_hash(), config=config.to_dict())


def resolve_cache(config: RunConfig) -> ArtifactCache:
    cache_dir = config.output.cache_directory
    if cache_dir is None:
        cache_dir = str(Path(config.output.directory) / "cache")
    return ArtifactCache(cache_dir)


# --------------------------------------------------------------------------
# billiard spectra with caching
# --------------------------------------------------------------------------

class SpectrumProvider:
    """Cached energies of one billiard geometry family under deformation."""

    def __init__(self, config: RunConfig, cache: ArtifactCache | None = None):
        self.config = config
        self.cache = cache if cache is not None else resolve_cache(config)
        self.spec = config.geometry.billiard_spec()
        mesh_cfg = config.mesh
        self.arc_points = mesh_cfg.arc_points or 2 * mesh_cfg.resolution
        self._mesh = None
        self.last_compute_seconds = None
        self.last_from_cache = None

    @property
    def mesh(self) -> geometry.Mesh:
        if self._mesh is None:
            m = geometry.build_mesh(self.spec, self.config.mesh.resolution,
                                    self.arc_points)
            if isinstance(m, tuple):
                raise ConfigError("billiard spectra need a connected domain")
            self._mesh = m
        return self._mesh

    def _key(self, k: int, param: str | None, value: float | None) -> dict:
        g = self.config.geometry
        return {
            "what": "billiard-energies",
            "geometry": [g.kind, g.lx, g.ly, g.radius],
            "resolution": self.config.mesh.resolution,
            "arc_points": self.arc_points,
            "order": self.config.mesh.order,
            "k": k,
            "tol": self.config.eigen.tol,
            "window": self.config.eigen.window,
            "seed": self.config.eigen.seed,
            "param": param,
            "value": value,
        }

    def energies(self, k: int, param: str | None = None,
                 value: float | None = None) -> np.ndarray:
        if param is not None and value == float(getattr(self.spec, param)):
            param, value = None, None  # undeformed reference, shared across sweeps
        key = self._key(k, param, value)
        hit = self.cache.load(key)
        if hit is not None:
            self.last_compute_seconds = float(hit["compute_seconds"][()])
            self.last_from_cache = True
            return hit["energies"]
        mesh = self.mesh
        if param is not None:
            mesh = geometry.deform_mesh(mesh, self.spec, param, value)
        t0 = time.perf_counter()
        system = fem.assemble(mesh, order=self.config.mesh.order)
        result = lowest_eigenpairs(
            system, k, tol=self.config.eigen.tol, keep_vectors=False,
            dense_cutoff=self.config.eigen.dense_cutoff,
            window=self.config.eigen.window, seed=self.config.eigen.seed)
        elapsed = time.perf_counter() - t0
        self.cache.store(key, energies=result.energies,
                         residuals=result.residuals,
                         compute_seconds=np.array(elapsed))
        self.last_compute_seconds = elapsed
        self.last_from_cache = False
        return result.energies


def sweep_level_curve(provider: SpectrumProvider, param: str, n_levels: int
                      ) -> pressure.LevelCurve:
    """Level curve of one parameter using the provider's cache."""
    cfg = provider.config
    ref_value = float(getattr(provider.spec, param))

    def energies_fn(offset: float) -> np.ndarray:
        return provider.energies(n_levels + pressure.CLUSTER_BUFFER,
                                 param=param, value=ref_value + offset)

    return pressure.level_curve(
        provider.spec, param, cfg.pressure.dlam, n_levels,
        resolution=cfg.mesh.resolution, arc_points=provider.arc_points,
        order=cfg.mesh.order, tol=cfg.eigen.tol, samples=cfg.pressure.samples,
        energies_fn=energies_fn)


# --------------------------------------------------------------------------
# run functions
# --------------------------------------------------------------------------

def run_mesh(config: RunConfig) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    with _stage(manifest, "mesh"):
        kind = config.geometry.kind
        if kind == "twobox":
            spec = config.geometry.twobox_spec()
            left, right = geometry.build_mesh(spec, config.mesh.resolution)
            for tag, m in (("left", left), ("right", right)):
                path = out / f"mesh_{tag}.txt"
                geometry.write_mesh(path, m)
                manifest.outputs.append(path.name)
        else:
            spec = config.geometry.billiard_spec()
            arc = config.mesh.arc_points or 2 * config.mesh.resolution
            m = geometry.build_mesh(spec, config.mesh.resolution, arc)
            path = out / "mesh.txt"
            geometry.write_mesh(path, m)
            manifest.outputs.append(path.name)
    manifest.write(out)
    return manifest


def run_spectrum(config: RunConfig, *, dump_matrices: bool = False) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    with _stage(manifest, "geometry"):
        spec = config.geometry.billiard_spec()
        arc = config.mesh.arc_points or 2 * config.mesh.resolution
        mesh = geometry.build_mesh(spec, config.mesh.resolution, arc)
    with _stage(manifest, "assemble"):
        system = fem.assemble(mesh, order=config.mesh.order)
        if dump_matrices:
            fem.write_matrix(out / "stiffness.txt", system.stiffness)
            fem.write_matrix(out / "mass.txt", system.mass)
            manifest.outputs += ["stiffness.txt", "mass.txt"]
    with _stage(manifest, "eigensolve"):
        result = lowest_eigenpairs(
            system, config.eigen.levels, tol=config.eigen.tol,
            keep_vectors=config.output.write_vectors,
            dense_cutoff=config.eigen.dense_cutoff,
            window=config.eigen.window, seed=config.eigen.seed)
    write_spectrum_csv(out / "spectrum.csv", result, manifest.filename)
    manifest.outputs.append("spectrum.csv")
    if config.output.write_vectors:
        write_vectors_text(out / "vectors.txt", result)
        manifest.outputs.append("vectors.txt")
    if result.clusters():
        manifest.warnings.append(f"{len(result.clusters())} quasi-degenerate clusters")
    manifest.write(out)
    return manifest


def run_pressure(config: RunConfig, params: tuple | None = None) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    cache = resolve_cache(config)
    provider = SpectrumProvider(config, cache)
    params = params or config.pressure.params
    for param in params:
        with _stage(manifest, f"sweep-{param}"):
            curve = sweep_level_curve(provider, param, config.eigen.levels)
            records = pressure.pressure_from_curve(curve)
        rows = [(r.level, r.energy, r.raw_derivative, r.pressure, r.pa, int(r.flagged))
                for r in records]
        write_csv(out / f"pressure_{param}.csv",
                  ["level", "E", "dE", "P", "PA", "flagged"], rows, manifest)
        nflag = int(curve.flagged.sum())
        if nflag:
            manifest.warnings.append(f"{param}: {nflag} levels flagged near avoided crossings")
    manifest.write(out)
    return manifest


@dataclass
class BoyleResult:
    records_x: list
    records_y: list
    fit_x: pressure.BoyleFit
    fit_y: pressure.BoyleFit
    isotropy_median: float
    curve_x: pressure.LevelCurve
    curve_y: pressure.LevelCurve


def boyle_analysis(config: RunConfig, cache: ArtifactCache | None = None) -> BoyleResult:
    provider = SpectrumProvider(config, cache)
    curve_x = sweep_level_curve(provider, "lx", config.eigen.levels)
    curve_y = sweep_level_curve(provider, "ly", config.eigen.levels)
    records_x = pressure.pressure_from_curve(curve_x)
    records_y = pressure.pressure_from_curve(curve_y)
    window = config.pressure.smoothing_window
    fit_x = pressure.boyle_fit(records_x, window=window)
    fit_y = pressure.boyle_fit(records_y, window=window)
    mism = pressure.isotropy_mismatch(records_x, records_y)
    lo, hi = len(mism) // 2, len(mism)
    return BoyleResult(records_x, records_y, fit_x, fit_y,
                       float(np.median(mism[lo:hi])), curve_x, curve_y)


def run_boyle(config: RunConfig) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    cache = resolve_cache(config)
    with _stage(manifest, "boyle"):
        res = boyle_analysis(config, cache)
    n = len(res.records_x)
    windowed = np.full(n, np.nan)
    windowed[: len(res.fit_x.windowed)] = res.fit_x.windowed
    rows = [
        (r.level, r.energy, r.pressure, ry.pressure, r.pa, ry.pa, windowed[i])
        for i, (r, ry) in enumerate(zip(res.records_x, res.records_y))
    ]
    write_csv(out / "boyle.csv",
              ["level", "E", "Px", "Py", "PxA", "PyA", "dPxA_window"], rows, manifest)
    manifest.warnings.append(
        f"fit: a_x={res.fit_x.slope:.4f} b_x={res.fit_x.intercept:.3f} "
        f"a_y={res.fit_y.slope:.4f} b_y={res.fit_y.intercept:.3f}")
    iso_ok = res.isotropy_median < 0.10
    manifest.warnings.append(
        f"isotropy median (upper half of levels): {res.isotropy_median:.4f} "
        f"-> {'consistent' if iso_ok else 'ANISOTROPIC'}")
    manifest.write(out)
    return manifest


# --------------------------------------------------------------------------
# two-particle pipeline
# --------------------------------------------------------------------------

def build_coupled(config: RunConfig, cache: ArtifactCache | None = None,
                  pair_target: int | None = None, *, store: bool = True,
                  inplace: bool = False):
    """Coupled spectrum + interaction matrix, cached by physics parameters.

    `inplace` reuses the interaction matrix's memory for the Hamiltonian and
    returns None in its place (for very large bases where only the spectrum
    is needed); `store=False` skips writing the cache entry.
    """
    cache = cache if cache is not None else resolve_cache(config)
    tp = config.twoparticle
    spec2 = config.geometry.twobox_spec()
    pair_target = pair_target or tp.pair_target
    basis = twoparticle.product_basis(
        spec2, e_cut=tp.e_cut, pair_target=None if tp.e_cut else pair_target)
    key = {
        "what": "coupled-spectrum",
        "boxes": [spec2.lx_left, spec2.lx_right, spec2.ly, spec2.wall],
        "coupling": tp.coupling,
        "e_cut": basis.e_cut,
        "quad_points": tp.quad_points,
    }
    hit = cache.load(key)
    if hit is not None:
        spectrum = twoparticle.CoupledSpectrum(
            basis, tp.coupling, hit["energies"], hit["states"])
        return basis, hit["v_matrix"], spectrum, True
    v = twoparticle.coulomb_matrix(basis, tp.coupling, tp.quad_points)
    h = twoparticle.assemble_h2p(basis, v, copy=not inplace)
    spectrum = twoparticle.diagonalize_h2p(h, basis, tp.coupling, overwrite=True)
    if inplace:
        v = None
    if store and v is not None:
        cache.store(key, energies=spectrum.energies, states=spectrum.states,
                    v_matrix=v)
    return basis, v, spectrum, False


def run_assemble2p(config: RunConfig) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    with _stage(manifest, "assemble2p"):
        basis, _, spectrum, cached = build_coupled(config)
    spec2 = config.geometry.twobox_spec()
    write_csv(out / "geometry.csv",
              ["Lx_left", "Lx_right", "Ly", "wall"],
              [(spec2.lx_left, spec2.lx_right, spec2.ly, spec2.wall)], manifest)
    rows = [(j, e) for j, e in enumerate(spectrum.energies)]
    write_csv(out / "coupled_levels.csv", ["j", "E_j"], rows, manifest)
    manifest.warnings.append(
        f"basis pairs={basis.size} e_cut={basis.e_cut:.6g} cached={cached}")
    manifest.write(out)
    return manifest


def run_quench(config: RunConfig, m0: tuple, n0: tuple) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    tp = config.twoparticle
    with _stage(manifest, "coupled-spectrum"):
        _, v, spectrum, _ = build_coupled(config)
    with _stage(manifest, "quench"):
        times = np.linspace(0.0, tp.time_max, tp.time_points)
        result = twoparticle.quench(spectrum, v, m0, n0, times,
                                    trust_fraction=tp.trust_fraction)
    name = f"quench_{m0[0]}_{m0[1]}_{n0[0]}_{n0[1]}.csv"
    rows = zip(result.times, result.e_left, result.e_right, result.v_int,
               result.e_total)
    write_csv(out / name, ["t", "E_left", "E_right", "V_int", "E_total"],
              rows, manifest)
    manifest.warnings.append(
        f"leak={result.ensemble.leak:.3e} "
        f"dQ_left={result.delta_q_left:.6g} dQ_right={result.delta_q_right:.6g}")
    manifest.write(out)
    return manifest


def run_balance(config: RunConfig, m0: tuple, n0: tuple) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    tp = config.twoparticle
    with _stage(manifest, "coupled-spectrum"):
        basis, _, spectrum, _ = build_coupled(config)
    count = min(tp.balance_count, basis.size)
    with _stage(manifest, "balance"):
        ratios = twoparticle.energy_balance_ratios(spectrum, count)
        overlaps = spectrum.overlaps(m0, n0)[:count] ** 2
        # zero-coupling reference shares the basis; ratios are then exact
        eps_l = basis.left.energies[basis.pair_left]
        eps_r = basis.right.energies[basis.pair_right]
        order = np.argsort(eps_l + eps_r, kind="stable")[:count]
        ln0 = np.log(eps_l[order] / eps_r[order])
    rows = [(j, ratios.energies[j], ratios.ln_ratio[j], overlaps[j])
            for j in range(count)]
    write_csv(out / "balance_ratios.csv",
              ["j", "E_j", "ln_ratio", "overlap_with_initial"], rows, manifest)
    rows0 = [(int(j), eps_l[order[j]] + eps_r[order[j]], ln0[j], 0.0)
             for j in range(count)]
    write_csv(out / "balance_ratios_k0.csv",
              ["j", "E_j", "ln_ratio", "overlap_with_initial"], rows0, manifest)
    manifest.write(out)
    return manifest


def load_initial_set(path: str | Path) -> list:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 4:
            raise ConfigError(f"initial-state line needs 4 integers: '{line}'")
        vals = [int(p) for p in parts]
        rows.append(((vals[0], vals[1]), (vals[2], vals[3])))
    if not rows:
        raise ConfigError(f"initial-set file {path} is empty")
    return rows


def thermo_analysis(config: RunConfig, initial_set=None,
                    cache: ArtifactCache | None = None):
    """Samples, filtered set, per-side fits, and offsets for one config."""
    th = config.thermo
    basis, _, spectrum, _ = build_coupled(config, cache,
                                          pair_target=th.pair_target)
    if initial_set is None:
        initial_set = thermo.select_initial_states(
            basis, e_min=th.sample_e_min,
            e_max=th.sample_e_max_fraction * basis.e_cut,
            initial_mismatch=th.initial_mismatch, limit=th.max_samples)
    samples = thermo.sample_equilibria(
        spectrum, initial_set, trust_fraction=config.twoparticle.trust_fraction)
    accepted = thermo.filter_samples(
        samples, initial_mismatch=th.initial_mismatch,
        final_mismatch=th.final_mismatch)
    fit_l = thermo.fit_temperature(accepted, "left")
    fit_r = thermo.fit_temperature(accepted, "right")
    offsets = thermo.temperature_offsets(fit_l, fit_r, accepted)
    return samples, accepted, fit_l, fit_r, offsets


def run_thermo(config: RunConfig, initial_file: str | None = None) -> RunManifest:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(config)
    initial_set = load_initial_set(initial_file) if initial_file else None
    with _stage(manifest, "thermo"):
        samples, accepted, fit_l, fit_r, offsets = thermo_analysis(config, initial_set)
    rows = [(s.m0[0], s.m0[1], s.n0[0], s.n0[1], s.e_total,
             s.ebar_left, s.ebar_right, s.s_left, s.s_right, s.leak)
            for s in samples]
    write_csv(out / "thermo_samples.csv",
              ["m0x", "m0y", "n0x", "n0y", "E", "Ebar_l", "Ebar_r", "S_l", "S_r", "leak"],
              rows, manifest)
    rows = zip(offsets.e_total, offsets.t_left, offsets.t_right,
               offsets.dt_abs, offsets.dt_rel)
    write_csv(out / "temperature_offsets.csv",
              ["E", "T_l", "T_r", "dT_abs", "dT_rel"], rows, manifest)
    manifest.warnings.append(
        f"samples={len(samples)} accepted={len(accepted)} "
        f"alpha_l={fit_l.alpha:.4f} alpha_r={fit_r.alpha:.4f}")
    manifest.write(out)
    return manifest
