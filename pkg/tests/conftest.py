import numpy as np
import pytest

from mr2 import Dataset


def make_reference_dataset(seed=0, n=20000, k=5, strength=0.6,
                           beta=(0.0, 0.0, 0.0, 0.2, 0.2), p=0.8,
                           rho=0.25):
    """One draw from the dense-interaction identity design: candidates are
    iid Bernoulli(p), the exposure loads every subset product with a
    common coefficient, and the listed direct effects enter the outcome."""
    rng = np.random.default_rng(seed)
    g = (rng.random((n, k)) < p).astype(float)
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    eps = rng.standard_normal((n, 2)) @ chol.T
    a = strength * (np.prod(1.0 + g, axis=1) - 1.0) + eps[:, 1]
    y = a + g @ np.asarray(beta, dtype=float) + eps[:, 0]
    return Dataset(y=y, a=a, g=g)


def write_csv_file(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return str(path)


@pytest.fixture
def small_csv(tmp_path):
    return write_csv_file(
        tmp_path / "small.csv",
        ["Y", "A", "G1", "G2"],
        [[1.5, 0.5, 1, 0], [2.0, 1.0, 0, 1], [0.25, -0.5, 1, 1]],
    )
