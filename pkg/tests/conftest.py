"""Shared fixtures; the heavy pipelines are session-scoped and cached.

Set BILLIARDTHERM_TEST_CACHE to a directory to persist spectra across test
runs during development; by default every session starts cold so that the
recorded timings are honest.
"""
import os

import pytest

from billiardtherm.cache import ArtifactCache
from billiardtherm.config import RunConfig
from billiardtherm import pipeline


@pytest.fixture(scope="session")
def test_cache(tmp_path_factory):
    root = os.environ.get("BILLIARDTHERM_TEST_CACHE")
    if root:
        return ArtifactCache(root)
    return ArtifactCache(tmp_path_factory.mktemp("cache"))


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory):
    """Where acceptance runs deposit CSVs for the figure pipeline."""
    root = os.environ.get("BILLIARDTHERM_ARTIFACTS", "out/acceptance")
    os.makedirs(root, exist_ok=True)
    return root


@pytest.fixture(scope="session")
def fig1_config(tmp_path_factory, test_cache):
    cfg = RunConfig()
    cfg.output.directory = str(tmp_path_factory.mktemp("boyle-out"))
    cfg.output.cache_directory = str(test_cache.root)
    return cfg


@pytest.fixture(scope="session")
def boyle_bundle(fig1_config, test_cache):
    """Full Boyle pipeline on the reference chaotic billiard (expensive)."""
    return pipeline.boyle_analysis(fig1_config, test_cache)


@pytest.fixture(scope="session")
def fig3_bundle(test_cache, tmp_path_factory):
    """Coupled two-box system at the reference strong coupling."""
    cfg = RunConfig()
    cfg.output.directory = str(tmp_path_factory.mktemp("fig3-out"))
    cfg.output.cache_directory = str(test_cache.root)
    basis, v, spectrum, _ = pipeline.build_coupled(cfg, test_cache)
    return cfg, basis, v, spectrum


@pytest.fixture(scope="session")
def thermo_bundle(test_cache, tmp_path_factory):
    """Temperature-sampling pipeline on the larger basis."""
    cfg = RunConfig()
    cfg.output.directory = str(tmp_path_factory.mktemp("thermo-out"))
    cfg.output.cache_directory = str(test_cache.root)
    cfg.thermo.final_mismatch = 0.05
    samples, accepted, fit_l, fit_r, offsets = pipeline.thermo_analysis(
        cfg, cache=test_cache)
    return cfg, samples, accepted, fit_l, fit_r, offsets
