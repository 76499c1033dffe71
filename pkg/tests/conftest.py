import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(rng, n=1, max_t=5.0, max_deg=60.0):
    """Random 6-DoF parameter rows away from gimbal lock."""
    p = np.zeros((n, 6))
    p[:, :3] = rng.uniform(-max_t, max_t, (n, 3))
    p[:, 3:] = rng.uniform(-max_deg, max_deg, (n, 3))
    return p if n > 1 else p[0]


def rodrigues(axis, deg):
    """Independent single-axis rotation via the Rodrigues formula."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    th = np.deg2rad(deg)
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small on-disk dataset shared by data/training/cli tests: (root, cfg)."""
    from dualtrack import phantom

    root = tmp_path_factory.mktemp("tiny") / "ds"
    cfg = phantom.DatasetConfig(
        n_train=6, n_val=2, n_test=3, phantom_size=64, num_frames=32,
        width=32, height=32, length_mm=18.0, noise_level=0.02, seed=11)
    phantom.generate_dataset(root, cfg)
    return root, cfg
