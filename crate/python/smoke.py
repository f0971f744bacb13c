"""Smoke test for the `empc` extension module.

Build and install it first:

    pip install --no-build-isolation ./crates/python

then run `python python/smoke.py` from the repository root.
"""

import math
import pathlib
import sys

import empc

ROOT = pathlib.Path(__file__).resolve().parent.parent


def check(cond, what):
    print(f"{'ok  ' if cond else 'FAIL'} {what}")
    return bool(cond)


def main():
    results = []

    h = empc.CyclicHorizon(5, 3)
    results.append(check([h.length(k) for k in range(6)] == [5, 4, 3, 5, 4, 3], "cyclic horizon law"))
    results.append(check(empc.horizon_length(h, 7) == 4, "horizon_length"))

    bucket = empc.TokenBucket(1, 3, 10)
    results.append(check(bucket.cycle_length == 3 and bucket.threshold == 2, "bucket cycle length and threshold"))
    results.append(check(bucket.step(1, True) is None and bucket.step(2, True) == 0 and bucket.step(10, False) == 10, "bucket steps"))

    sys_ = empc.NcsSystem(
        a=[[1.1]], b=[[1.0]], q=[[1.0]], r=[[1.0]],
        state_bounds=([-2.0], [2.0]), input_bounds=([-1.0], [1.0]),
        bucket=bucket,
    )
    results.append(check(sys_.state_dim == 3 and sys_.input_dim == 2, "scalar system dimensions"))
    sol = sys_.solve([0.5, 0.0, 10.0], 3)
    results.append(check(sol.feasible and len(sol.inputs) == 3, "scalar OCP solves"))
    results.append(check(sys_.in_terminal_set(sol.states[-1]), "terminal state lies in the terminal set"))
    x, u = [0.0, 1.0, 0.0], [0.0, 0.0]
    results.append(check(math.isclose(sys_.rotated_stage_cost(x, u), 1.0), "rotated stage cost"))
    try:
        sys_.rotated_stage_cost(x, [0.0, 1.0])
        results.append(check(False, "inadmissible pair raises"))
    except ValueError:
        results.append(check(True, "inadmissible pair raises"))

    cfg = empc.ExperimentConfig.load(str(ROOT / "configs" / "token_bucket.toml"))
    trace = cfg.run()
    results.append(check(len(trace) == cfg.steps == 15, "closed loop has one row per step"))
    results.append(check(trace.horizons[:4] == [3, 2, 1, 3], "trace follows the horizon law"))
    results.append(check(trace.set_distances[-1] < 1e-2, "closed loop approaches the target set"))
    reports = cfg.check_closed_loop(trace)
    failing = [r["name"] for r in reports if not r["pass"] and not r["informational"]]
    results.append(check(not failing, f"closed-loop certificates pass {failing}"))
    results.append(check(trace.to_csv() == cfg.run().to_csv(), "traces are deterministic"))

    model = cfg.system()
    dev = model.multi_step_equivalence(cfg.initial_state, cfg.max_horizon, 5)
    results.append(check(dev <= 1e-8, f"cyclic and block loops agree ({dev:.1e})"))
    suite = model.certificate_suite(cfg.max_horizon, samples=1000, ocp_samples=20)
    failing = [r["name"] for r in suite if not r["pass"] and not r["informational"]]
    results.append(check(not failing, f"certificate suite passes {failing}"))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
