"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every test records one ``PASS``/``FAIL`` line; the lines are printed at the
end of the pytest run (see ``conftest.py``) and when this file is executed
directly.
"""

import json
import time
from pathlib import Path

import numpy as np

from mgdlrc import diagnostics as D
from mgdlrc.evaluation import rollout_summary
from mgdlrc.policy import HyperParams, lambda_objective, solve_lambda
from mgdlrc.trainer import RunConfig, Trainer, run_self_play
from mgdlrc.weights import WeightSchedule, default_alpha_tilde, gap_envelope

PAPER = dict(num_players=2, num_states=2, num_actions=2, horizon=2, stay_prob=0.8)
SEEDS = range(9)
# step size for the decay reproduction; the theoretical value is far too
# conservative to leave the transient within 10^4 rounds (see the notes)
DECAY_ETA = 0.05
PILOT = json.loads((Path(__file__).parent / "data" / "pilot_eta005.json").read_text())

RESULTS: dict[int, str] = {}


def record(k: int, ok: bool, detail: str):
    RESULTS[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def paper_params(eta="theoretical"):
    return HyperParams.defaults(2, 2, 2, eta=eta)


_cache = {}


def short_runs():
    """Nine theoretical-step runs of 500 rounds with history."""
    if "short" not in _cache:
        _cache["short"] = [
            run_self_play(RunConfig(rounds=500, params=paper_params(), generator=PAPER,
                                    seed=s, record_history=True))
            for s in SEEDS]
    return _cache["short"]


def long_runs():
    if "long" not in _cache:
        _cache["long"] = [
            run_self_play(RunConfig(rounds=10_000, params=paper_params(DECAY_ETA),
                                    generator=PAPER, seed=s))
            for s in SEEDS]
    return _cache["long"]


def test_c01_qv_identity():
    start = time.perf_counter()
    c = D.qv_identity_suite(num_games=20, rounds=200, seed=0, tol=1e-9)
    took = time.perf_counter() - start
    err = 1e-9 - c.worst_slack
    ok = c.passed and took < 60
    record(1, ok, f"Q/V identity on 20 games x 200 rounds, max error {err:.2e} "
                  f"(<= 1e-9), {took:.1f}s")
    assert ok


def test_c02_weight_suite():
    start = time.perf_counter()
    c = D.weight_suite(horizons=(1, 2, 3, 5), t_max=10_000, exact_upto=50)
    took = time.perf_counter() - start
    ok = c.passed and took < 10
    record(2, ok, f"weight properties for H in {{1,2,3,5}}, t <= 1e4, worst slack "
                  f"{c.worst_slack:.2e}, {took:.1f}s")
    assert ok


def test_c03_lifted_equivalence():
    start = time.perf_counter()
    ident = D.lifted_identity_suite(samples=1000, seed=0, tol=1e-10)
    run = short_runs()[0]
    arg = D.lifted_argmax_check(run, rounds=100, samples=500, seed=0)
    took = time.perf_counter() - start
    ok = ident.passed and arg.passed and arg.cells_checked == 100 and took < 30
    record(3, ok, f"lifted identity max diff {1e-10 - ident.worst_slack:.1e} on 1000 tuples; "
                  f"argmax held on {arg.cells_checked} rounds x 500 candidates, {took:.1f}s")
    assert ok


def dense_grid_best(R, at, n=10**6, floor=1e-12, cap=1.0):
    best = -np.inf
    for lo in range(0, n, 100_000):
        lam = floor + (cap - floor) * np.arange(lo + 1, min(lo + 100_000, n) + 1) / n
        best = max(best, float(lambda_objective(lam, R[None, :], at).max()))
    return best


def test_c04_lambda_solver_vs_grid():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = np.inf
    for k in range(200):
        d = int(rng.integers(2, 7))
        at = default_alpha_tilde(d)
        scale = 10.0 ** rng.uniform(0, 3)
        R = rng.uniform(-scale, scale, size=d) - rng.uniform(0, scale)
        p = HyperParams(base_eta=0.1, alpha_tilde=at)
        lam = float(solve_lambda(R, p))
        worst = min(worst, float(lambda_objective(lam, R, at)) - dense_grid_best(R, at))
    closed = 0.0
    for at in (2.5, 10.0, default_alpha_tilde(2), default_alpha_tilde(4)):
        for c in (-(at - 1) * 1.0001, -(at - 1) * 3, -50.0 * at, -1e5):
            if c < -(at - 1):
                lam = float(solve_lambda(np.full(3, c), HyperParams(base_eta=0.1, alpha_tilde=at)))
                closed = max(closed, abs(lam - (at - 1) / -c))
    took = time.perf_counter() - start
    ok = worst >= -1e-8 and closed <= 1e-8 and took < 60
    record(4, ok, f"solver minus 1e6-grid objective >= {worst:.2e} on 200 signals; "
                  f"closed-form error {closed:.1e}; {took:.1f}s")
    assert ok


def test_c05_nonnegative_regret():
    start = time.perf_counter()
    checks = [D.nonnegative_regret_check(r, tol_sign=1e-9, tol_dom=1e-6) for r in short_runs()]
    took = time.perf_counter() - start
    sign = min(c.details["sign"] for c in checks)
    dom = min(c.details["dominates"] for c in checks)
    eq = min(c.details["equality"] for c in checks)
    ok = all(c.passed for c in checks)
    record(5, ok, f"9 seeds, T=500: min lifted regret {sign:.3g}, dominance slack {dom:.2e}, "
                  f"equality gap {-eq:.2e}; checks {took:.1f}s")
    assert ok


def test_c06_rvu_and_signal_deviation():
    start = time.perf_counter()
    rvu, dev = np.inf, np.inf
    rvu_max = np.inf
    for r in short_runs():
        final, conservative = D.rvu_check(r, tol=1e-6)
        rvu = min(rvu, final.worst_slack)
        rvu_max = min(rvu_max, conservative.worst_slack)
        dev = min(dev, D.signal_deviation_check(r, tol=1e-6).worst_slack)
    took = time.perf_counter() - start
    ok = rvu >= -1e-6 and rvu_max >= -1e-6 and dev >= -1e-6
    record(6, ok, f"9 seeds, T=500: RVU slack {rvu:.3g} (max-round reading {rvu_max:.3g}), "
                  f"signal-deviation slack {dev:.2e}; {took:.1f}s")
    assert ok


def test_c07_gap_decay():
    start = time.perf_counter()
    gaps = np.array([r.column("gap_raw") for r in long_runs()])
    took = time.perf_counter() - start
    med = np.median(gaps, axis=0)
    decay = med[4999] / med[499]
    T = np.arange(500, gaps.shape[1] + 1)
    scale = T / np.log(T)
    scaled = med[499:] * scale
    bound_ratio = scaled.max() / scaled[0]
    seed_scaled = gaps[:, 499:] * scale
    per_seed = seed_scaled.max(axis=1) / seed_scaled[:, 0]
    # the pilot goldens pin the trajectories themselves
    golden = np.array([PILOT["gap_raw"][str(s)] for s in SEEDS])
    idx = np.array(PILOT["rounds"]) - 1
    drift = float(np.abs(gaps[:, idx] - golden).max())
    ok = decay <= 0.2 and bound_ratio <= 2.0 and drift <= 1e-9 and took < 300
    record(7, ok, f"eta={DECAY_ETA}: median gap ratio T5000/T500 = {decay:.4f} (<= 0.2), "
                  f"gap*T/logT max/at-500 = {bound_ratio:.3f} (<= 2; per-seed max "
                  f"{per_seed.max():.3f}), golden drift {drift:.1e}, {took:.0f}s")
    assert ok


def test_c08_envelope():
    worst = np.inf
    rows = 0
    for r in short_runs() + long_runs():
        c = D.envelope_check(r)
        worst = min(worst, c.worst_slack)
        rows += c.cells_checked
    # sanity: the envelope only binds below H once T is very large
    assert gap_envelope(10_000, 2, 2, default_alpha_tilde(2), 2) == 2.0
    ok = worst >= 0.0
    record(8, ok, f"envelope held on {rows} recorded rounds of 18 runs, worst slack {worst:.3f}")
    assert ok


def test_c09_rollout():
    start = time.perf_counter()
    run = short_runs()[0]
    sched = WeightSchedule(2, run.params.base_eta)
    value = run.V[:, 0, run.game.initial_state]
    s = rollout_summary(run.game, run.history.policies(), sched, value, episodes=100_000, seed=0)
    took = time.perf_counter() - start
    z = s.z_scores
    ok = bool(np.all(z <= 3.0)) and took < 120
    record(9, ok, f"1e5 episodes, T=500: z-scores {np.round(z, 2).tolist()} (<= 3), {took:.1f}s")
    assert ok


def test_c10_determinism():
    cfg = lambda: RunConfig(rounds=500, params=paper_params(), generator=PAPER, seed=7,
                            record_history=True)
    a = run_self_play(cfg()).to_csv()
    b = run_self_play(cfg()).to_csv()
    part = Trainer(cfg())
    part.run(until=250)
    resumed = Trainer.restore(part.checkpoint()).run()
    same = a == b
    resumed_same = resumed.to_csv() == a
    ok = same and resumed_same
    record(10, ok, f"repeat run byte-identical: {same}; resume at 250 matches: {resumed_same}")
    assert ok


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                fn()
            except AssertionError:
                pass
    for k in sorted(RESULTS):
        print(RESULTS[k])
