"""Lowest eigenpairs of the generalized symmetric problem K x = E M x.

Small systems are reduced densely.  Large systems are swept with a windowed
shift-invert Lanczos: consecutive ARPACK windows walk up the spectrum, each
window overlapping the previous one by a handful of levels.  Window placement
uses the empirical local level density, seam consistency is enforced by
requiring matched overlap levels, and duplicates across seams are detected
with mass-matrix inner products so that nearly degenerate pairs survive.

The residual contract ||K x - E M x|| <= tol * ||K x|| is verified
explicitly for every returned pair, independent of the backend's own
stopping rule.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import AssemblyError, ConvergenceError, ValidationError
from .fem import FemSystem


@dataclass
class SpectrumSet:
    """Ascending eigenvalues with (optionally) M-orthonormal eigenvectors."""

    energies: np.ndarray
    vectors: np.ndarray | None
    residuals: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.energies)

    def clusters(self) -> list[list[int]]:
        """Index groups of quasi-degenerate levels recorded at solve time."""
        return self.metadata.get("clusters", [])


def weyl_count(energy, area: float, perimeter: float):
    """Two-term smooth counting function for H = -laplacian/2, Dirichlet."""
    energy = np.asarray(energy, dtype=float)
    return area * energy / (2.0 * np.pi) - perimeter * np.sqrt(2.0 * energy) / (4.0 * np.pi)


def unfolded_spacings(energies: np.ndarray, area: float, perimeter: float) -> np.ndarray:
    """Nearest-neighbour spacings after unfolding with the Weyl mean count."""
    x = weyl_count(energies, area, perimeter)
    return np.diff(x)


def _find_clusters(energies: np.ndarray, rel_tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    current = [0]
    for i in range(1, len(energies)):
        if energies[i] - energies[i - 1] < rel_tol * max(abs(energies[i]), 1e-300):
            current.append(i)
        else:
            if len(current) > 1:
                groups.append(current)
            current = [i]
    if len(current) > 1:
        groups.append(current)
    return groups


def _residuals(kmat, mmat, energies, vectors) -> np.ndarray:
    kx = kmat @ vectors
    mx = mmat @ vectors
    num = np.linalg.norm(kx - mx * energies[None, :], axis=0)
    den = np.linalg.norm(kx, axis=0)
    return num / np.where(den > 0, den, 1.0)


def _dense_path(kmat, mmat, k: int, keep_vectors: bool):
    kd = kmat.toarray()
    md = mmat.toarray()
    try:
        np.linalg.cholesky(md)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError("mass matrix is not positive definite") from exc
    vals, vecs = eigh(kd, md, subset_by_index=(0, k - 1))
    res = _residuals(kmat, mmat, vals, vecs)
    return vals, (vecs if keep_vectors else vecs), res  # vectors needed for checks


def _window_solve(kmat, mmat, kw: int, sigma: float, v0: np.ndarray, tol: float):
    """One shift-invert ARPACK window; returns sorted (values, vectors)."""
    ncv = min(kmat.shape[0] - 1, max(2 * kw + 1, int(2.2 * kw)))
    for attempt in range(2):
        try:
            vals, vecs = eigsh(kmat, k=kw, M=mmat, sigma=sigma, which="LM",
                               v0=v0, ncv=ncv, maxiter=300)
        except ArpackNoConvergence as exc:
            got = len(exc.eigenvalues)
            if attempt == 0:
                ncv = min(kmat.shape[0] - 1, int(1.5 * ncv))
                continue
            raise ConvergenceError(
                f"ARPACK window at sigma={sigma:.6g} converged only {got}/{kw} pairs",
                converged=got,
            ) from exc
        order = np.argsort(vals)
        return vals[order], vecs[:, order]
    raise AssertionError("unreachable")


def lowest_eigenpairs(system: FemSystem, k: int, tol: float = 1e-8, *,
                      keep_vectors: bool = True, dense_cutoff: int = 3000,
                      window: int = 150, seed: int = 12345,
                      cluster_tol: float = 1e-8) -> SpectrumSet:
    """Compute the k lowest eigenpairs of a FemSystem.

    tol is the relative residual bound verified for every pair.  With
    keep_vectors=False the eigenvectors of finished spectral regions are
    discarded on the fly (the residual and orthonormality checks still run
    window by window), which keeps memory flat for long spectra.
    """
    n = system.dim
    if not (0 < k < n):
        raise ValidationError(f"need 0 < k < dim, got k={k}, dim={n}")
    if not (0 < tol <= 1e-4):
        raise ValidationError("tol must lie in (0, 1e-4]")

    t_start = time.perf_counter()
    kmat = system.stiffness.full().tocsc()
    mmat = system.mass.full().tocsc()
    if (mmat.diagonal() <= 0).any():
        raise AssemblyError("mass matrix has non-positive diagonal entries")

    meta = {"k": k, "tol": tol, "seed": seed, "dim": n}

    if n <= dense_cutoff or k > n // 3:
        vals, vecs, res = _dense_path(kmat, mmat, k, keep_vectors)
        if vals[0] <= 0:
            raise AssemblyError("non-positive eigenvalue in a Dirichlet problem")
        bad = res > tol
        if bad.any():
            raise ConvergenceError(
                f"dense path residuals exceed tol for {int(bad.sum())} pairs",
                converged=int((~bad).sum()),
            )
        gram = vecs.T @ (mmat @ vecs)
        ortho_dev = float(np.abs(gram - np.eye(k)).max())
        meta.update(method="dense", windows=1, ortho_dev=ortho_dev,
                    clusters=_find_clusters(vals, cluster_tol),
                    compute_seconds=time.perf_counter() - t_start)
        return SpectrumSet(vals, vecs if keep_vectors else None, res, meta)

    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)

    energies: list[float] = []
    residuals: list[float] = []
    vec_store = np.empty((n, 0))      # all vectors (keep_vectors) or seam buffer
    store_index: list[int] = []       # master indices of vec_store columns
    seam_size = 48
    min_overlap = 3
    n_windows = 0
    ortho_dev = 0.0

    def seam_check_and_merge(wvals, wvecs):
        """Deduplicate window results against the seam; return merge stats."""
        nonlocal vec_store, store_index, energies, residuals, ortho_dev
        matched = 0
        new_vals = []
        new_vecs = []
        e_arr = np.array(energies)
        for i, val in enumerate(wvals):
            x = wvecs[:, i]
            dup = False
            if len(e_arr):
                close = np.where(np.abs(e_arr - val) < 1e-6 * max(abs(val), 1.0))[0]
                for j in close:
                    if j in store_index:
                        col = store_index.index(j)
                        ov = abs(vec_store[:, col] @ (mmat @ x))
                        ortho_dev = max(ortho_dev, min(ov, abs(1 - ov)))
                        if ov > 0.5:
                            dup = True
                            break
                    else:
                        # vector already discarded: levels this deep in the
                        # finished region are always rediscoveries
                        dup = True
                        break
            if dup:
                matched += 1
            else:
                new_vals.append(val)
                new_vecs.append(x)
        if new_vals:
            order = np.argsort(new_vals)
            new_vals = [new_vals[i] for i in order]
            xstack = np.column_stack([new_vecs[i] for i in order])
            rnorm = _residuals(kmat, mmat, np.array(new_vals), xstack)
            base = len(energies)
            energies.extend(new_vals)
            residuals.extend(rnorm.tolist())
            vec_store = np.hstack([vec_store, xstack])
            store_index.extend(range(base, base + len(new_vals)))
            if not keep_vectors and vec_store.shape[1] > seam_size:
                drop = vec_store.shape[1] - seam_size
                vec_store = vec_store[:, drop:]
                store_index = store_index[drop:]
        return matched, len(new_vals)

    # first window from the bottom: sigma=0 sits below the Dirichlet spectrum
    kw = min(window, k)
    wvals, wvecs = _window_solve(kmat, mmat, kw, 0.0, v0, tol)
    seam_check_and_merge(wvals, wvecs)
    n_windows = 1

    while len(energies) < k:
        e_arr = np.array(energies)
        tail = e_arr[-min(len(e_arr), 100):]
        if tail[-1] - tail[0] <= 0:
            raise ConvergenceError("cannot estimate level density from collapsed tail",
                                   converged=len(energies))
        density = (len(tail) - 1) / (tail[-1] - tail[0])
        kw = max(30, min(window, k - len(energies) + min_overlap + 12))
        placed = False
        for attempt in range(4):
            overlap_target = 8 * (1 + 2 * attempt)
            sigma = e_arr[-1] + (0.5 * kw - overlap_target) / density
            wvals, wvecs = _window_solve(kmat, mmat, kw, sigma, v0, tol)
            matched, added = seam_check_and_merge(wvals, wvecs)
            n_windows += 1
            if matched >= min_overlap:
                placed = True
                break
            if added:
                # merged anyway; the level list may now contain a gap, so
                # roll back additions above the verified seam
                keep = len(energies) - added
                del energies[keep:]
                del residuals[keep:]
                mask = [si < keep for si in store_index]
                vec_store = vec_store[:, mask]
                store_index = [si for si in store_index if si < keep]
        if not placed:
            raise ConvergenceError(
                f"window seam at E~{e_arr[-1]:.6g} could not be stitched",
                converged=len(energies),
            )

    # master order is expected ascending already (windows fill bottom-up);
    # sort defensively in case a seam overlap surfaced an interior level late
    full = np.array(energies)
    order = np.argsort(full, kind="stable")
    energies_arr = full[order][:k]
    residuals_arr = np.array(residuals)[order][:k]
    if keep_vectors:
        vec_store = vec_store[:, order]
    if energies_arr[0] <= 0:
        raise AssemblyError("non-positive eigenvalue in a Dirichlet problem")
    bad = residuals_arr > tol
    if bad.any():
        raise ConvergenceError(
            f"{int(bad.sum())} of {k} pairs exceed residual tol {tol:g}",
            converged=int((~bad).sum()),
        )

    vectors = None
    if keep_vectors:
        vectors = vec_store[:, :k]
        gram = vectors.T @ (mmat @ vectors)
        ortho_dev = max(ortho_dev, float(np.abs(gram - np.eye(k)).max()))
        if ortho_dev > 10 * tol:
            # quasi-degenerate seam pairs can come back slightly oblique;
            # re-orthonormalize cluster by cluster with a Rayleigh-Ritz pass
            for group in _find_clusters(energies_arr, 1e-6):
                idx = np.array(group)
                xg = vectors[:, idx]
                gg = xg.T @ (mmat @ xg)
                w, u = np.linalg.eigh(gg)
                keep_dirs = w > 0.3
                basis = xg @ (u[:, keep_dirs] / np.sqrt(w[keep_dirs]))
                kr = basis.T @ (kmat @ basis)
                wr, ur = np.linalg.eigh(kr)
                vectors[:, idx[: len(wr)]] = basis @ ur
                energies_arr[idx[: len(wr)]] = wr
            residuals_arr = _residuals(kmat, mmat, energies_arr, vectors)
            gram = vectors.T @ (mmat @ vectors)
            ortho_dev = float(np.abs(gram - np.eye(k)).max())

    meta.update(method="windowed-shift-invert", windows=n_windows,
                ortho_dev=ortho_dev, clusters=_find_clusters(energies_arr, cluster_tol),
                compute_seconds=time.perf_counter() - t_start)
    return SpectrumSet(energies_arr, vectors, residuals_arr, meta)


def write_spectrum_csv(path, spectrum: SpectrumSet, manifest_ref: str | None = None):
    """CSV export `index,energy,residual` with optional manifest comment."""
    from pathlib import Path

    with Path(path).open("w") as fh:
        if manifest_ref:
            fh.write(f"# manifest: {manifest_ref}\n")
        fh.write("index,energy,residual\n")
        for i, (e, r) in enumerate(zip(spectrum.energies, spectrum.residuals)):
            fh.write(f"{i},{e:.17g},{r:.17g}\n")


def write_vectors_text(path, spectrum: SpectrumSet):
    """Eigenvector text blocks keyed by index: `vec <i>` then one row per dof."""
    from pathlib import Path

    if spectrum.vectors is None:
        raise ValidationError("spectrum was computed without eigenvectors")
    with Path(path).open("w") as fh:
        for i in range(spectrum.k):
            fh.write(f"vec {i}\n")
            for v in spectrum.vectors[:, i]:
                fh.write(f"{v:.17g}\n")
