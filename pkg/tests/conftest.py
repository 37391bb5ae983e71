from __future__ import annotations

import numpy as np
import pytest

import sdftrace as st


@pytest.fixture(scope="session")
def front_camera():
    """128^2 camera two units out on -z, the standard oracle viewpoint."""
    return st.Intrinsics(width=128, height=128), st.look_at((0.0, 0.0, -2.0))


@pytest.fixture(scope="session")
def small_camera():
    return st.Intrinsics(width=32, height=32), st.look_at((0.0, 0.0, -2.0))


@pytest.fixture(scope="session")
def sphere_family():
    """Three-sphere family fit once per session; completion tests share it.

    The fit is deterministic (seed 0), so sharing it does not couple tests
    through mutable state; everything downstream copies the codes.
    """
    targets = [st.SphereField(radius=r) for r in (0.3, 0.4, 0.5)]
    net, codes, report = st.fit_family(targets, latent_dim=2, epochs=30, seed=0)
    assert max(report.val_mae) < 0.02, "family fit quality gate"
    return net, codes, targets


@pytest.fixture(scope="session")
def tiny_net():
    """Small latent net with an actual surface, for gradient plumbing tests."""
    rng = np.random.default_rng(7)
    net = st.NeuralField.init(latent_dim=2, hidden=(16, 16), rng=rng)
    code = rng.normal(0.0, 0.3, 2)
    return net, code
