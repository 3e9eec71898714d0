"""Shipped experiment presets: desk-scale configs reaching every check.

Each preset is a complete config for :func:`doeblin.experiments.run_experiment`;
the CLI resolves ``run <name>`` against this table before trying the
filesystem.  The acceptance-scale parameter sets used by the test suite
are the same configs with finer grids and longer horizons.
"""

from __future__ import annotations

import copy

PRESETS: dict[str, dict] = {
    "renewal-constant": {
        "experiment": "renewal",
        "seed": 0,
        "params": {
            "b": {"kind": "constant", "value": 1.0},
            "spacing": 1.0 / 128,
            "horizon": 8.0,
            "fit_start": 2.0,
            "fit_end": 8.0,
            "expected_lambda": 1.0,
            "lambda_tol": 1e-8,
            "closed_form_tol": 2e-3,
            "slope_range": [-2.3, -1.7],
            "structural_t_max": 5.0,
        },
    },
    "renewal-crenel": {
        "experiment": "renewal",
        "seed": 0,
        "params": {
            "b": {"kind": "crenel", "a0": 1.0, "p": 1.0, "l": 0.75, "b_on": 1.0},
            "spacing": 1.0 / 64,
            "horizon": 8.0,
            "fit_start": 4.0,
            "fit_end": 8.0,
            "structural_t_max": 6.0,
        },
    },
    "verify-core": {
        "experiment": "verify-core",
        "seed": 0,
        "params": {"n_trials": 200, "max_cells": 20, "gap_horizon": 25},
    },
    "diffusion-kernel": {
        "experiment": "diffusion",
        "seed": 0,
        "params": {
            "n_cells": 128,
            "scales": [5.0, 10.0, 20.0],
            "sigma0": 2.0,
            "r0": 0.1,
            "horizon": 120.0,
        },
    },
    "periodic-sine": {
        "experiment": "periodic",
        "seed": 0,
        "params": {
            "b_time": {"kind": "one_plus_sin"},
            "period": 1.0,
            "spacing": 1.0 / 64,
            "a_max": 16.0,
            "n_periods": 8,
            "lambda_tol": 1e-6,
            "slope_range": [-2.3, -1.7],
        },
    },
    "maxage-saturating": {
        "experiment": "maxage",
        "seed": 0,
        "params": {
            "a0": 1.0,
            "a_inf": 2.0,
            "schedule_speed": 0.7,
            "b0": 1.0,
            "n_cells": 128,
            "gronwall_t": 3.0,
            "gronwall_samples": 100,
            "h0_times": [1.0, 2.0, 4.0, 6.0],
            "h0_r": 2.0,
            "start": 1.0,
            "horizons": [2.0, 3.0, 4.0, 5.0, 6.0],
            "gap_floor": 0.05,
        },
    },
    "branching-constant": {
        "experiment": "branching",
        "seed": 0,
        "params": {
            "b": {"kind": "constant", "value": 1.0},
            "x0": 0.0,
            "t": 4.0,
            "n_runs": 2000,
            "ks_n": 10000,
            "many_to_one": {"t": 6.0, "n_runs": 200, "cutoff": 1.0},
        },
    },
    "branching-crenel": {
        "experiment": "branching",
        "seed": 0,
        "params": {
            "b": {"kind": "crenel", "a0": 1.0, "p": 1.0, "l": 0.75, "b_on": 1.0},
            "x0": 0.0,
            "t": 5.0,
            "n_runs": 2000,
        },
    },
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; see `doeblin presets list`")
    return copy.deepcopy(PRESETS[name])
