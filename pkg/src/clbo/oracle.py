"""Independent reference-value computation.

Regenerates the frozen constants used across the test suite: benchmark
minima via a screening-plus-refinement search, plus closed-form spot
values evaluated from their definitions. Deterministic for a given seed;
the committed copy lives at ``clbo/data/reference_values.json`` and the
``clbo oracle`` subcommand rewrites it anywhere on demand.
"""

from __future__ import annotations

import json
import math
from importlib import resources

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc

from . import benchmarks

DEFAULT_SCREEN = 100_000
DEFAULT_REFINE = 200


def refine_minimum(batch_f, bounds, n_screen=DEFAULT_SCREEN, n_refine=DEFAULT_REFINE, seed=0):
    """Global minimum estimate: LHS screen, then local polish of the best.

    ``batch_f`` maps an (n, d) array to n values. Returns ``(x, value)``.
    """
    rng = np.random.default_rng(seed)
    bounds = np.asarray(bounds, dtype=float)
    d = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]
    sampler = qmc.LatinHypercube(d=d, seed=rng)
    pool = lo + sampler.random(n_screen) * (hi - lo)
    values = np.asarray(batch_f(pool))
    top = np.argsort(values, kind="stable")[:n_refine]

    best_x, best_v = None, np.inf
    for i in top:
        res = minimize(
            lambda x: float(batch_f(x[None, :])[0]),
            pool[i],
            method="L-BFGS-B",
            bounds=[tuple(b) for b in bounds],
        )
        if res.fun < best_v:
            best_v, best_x = float(res.fun), np.clip(res.x, lo, hi)
    return best_x, best_v


def _ei_closed_form(mean, sigma, f_min):
    z = (f_min - mean) / sigma
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return (f_min - mean) * float(ndtr(z)) + sigma * phi


def reference_values(seed=0, n_screen=DEFAULT_SCREEN, n_refine=DEFAULT_REFINE):
    """All derived reference values, keyed by a stable name."""
    out = {}

    searches = {
        "michalewicz5_min": (benchmarks.michalewicz, [(0.0, math.pi)] * 5),
        "michalewicz2_min": (benchmarks.michalewicz, [(0.0, math.pi)] * 2),
        "branin_min": (benchmarks.branin, [(-5.0, 10.0), (0.0, 15.0)]),
        "multimodal1d_min": (benchmarks.multimodal1d, [(0.5, 2.5)]),
        "hartman6_min": (benchmarks.hartman6, [(0.0, 1.0)] * 6),
    }
    for name, (f, bounds) in searches.items():
        x, v = refine_minimum(f, bounds, n_screen=n_screen, n_refine=n_refine, seed=seed)
        out[name] = v
        out[name.replace("_min", "_argmin")] = [float(c) for c in x]

    # closed forms evaluated from their definitions
    out["trid10_min"] = -10 * (10 + 4) * (10 - 1) / 6
    out["se_kernel_unit_distance2"] = math.exp(-2.0)
    out["nlml_unit_prior_zero_obs"] = 0.5 * math.log(2.0 * math.pi)
    out["ei_zero_z_unit_sigma"] = 1.0 / math.sqrt(2.0 * math.pi)
    out["ei_fmin1_mean0_sigma1"] = _ei_closed_form(0.0, 1.0, 1.0)
    out["influence_one_lengthscale"] = -math.expm1(-0.5)
    out["bootstrap_unique_fraction_n100"] = 1.0 - (1.0 - 1.0 / 100.0) ** 100

    return out


def write_reference_values(path, seed=0, n_screen=DEFAULT_SCREEN, n_refine=DEFAULT_REFINE):
    """Regenerate the fixtures file; byte-stable for a given seed."""
    values = reference_values(seed=seed, n_screen=n_screen, n_refine=n_refine)
    with open(path, "w") as fh:
        json.dump(values, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return values


def load_committed_values():
    """The reference values shipped with the package."""
    text = resources.files("clbo").joinpath("data/reference_values.json").read_text()
    return json.loads(text)
