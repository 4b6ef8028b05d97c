import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"


def finite_difference(f, arrays, h=1e-5):
    """Central finite-difference gradients of scalar ``f()`` w.r.t. each array.

    ``f`` must recompute the scalar from the (in-place perturbed) arrays.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def grad_rel_error(analytic, numeric):
    """max_i |g_a - g_fd| / max(1, |g_fd|), elementwise."""
    err = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = np.maximum(1.0, np.abs(gn))
        err = max(err, float(np.max(np.abs(ga - gn) / denom)))
    return err


def bladder_csv_path():
    """Locate the user-supplied bladder recurrence CSV, if present."""
    env = os.environ.get("SEQSURV_BLADDER_CSV")
    if env:
        return Path(env)
    return DATA_DIR / "bladder1.csv"


@pytest.fixture
def bladder_csv():
    path = bladder_csv_path()
    if not path.exists():
        pytest.skip(
            "bladder recurrence dataset not found: place the CSV at "
            f"{DATA_DIR / 'bladder1.csv'} or set SEQSURV_BLADDER_CSV (see README)"
        )
    return path
