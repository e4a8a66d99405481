"""Acceptance suite: one criterion per test, one printed pass/fail line each,
with the stated tolerances and runtime budgets asserted."""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from ergoswarm.basis import BoxDomain, build_context, eval_all, grad_all
from ergoswarm.controller import (
    ControlSchedule,
    ControllerParams,
    ErgodicMemory,
    Insertion,
    adjoint,
    control_step,
    mode_insertion_gradient,
    predict,
    rollout,
    saturate,
    spectral_metric,
    stacked_control_step,
    u_star,
)
from ergoswarm.dynamics import DoubleIntegrator, Quadrotor
from ergoswarm.estimation import SensorModel, TargetBelief, ekf_update, measure
from ergoswarm.network import (
    complete_uniform,
    consensus_round,
    metropolis_weights,
    ring_adjacency,
    rounds_to_tolerance,
    second_singular_value,
)
from ergoswarm.quadrature import basis_path_integral
from ergoswarm.scenario import config_from_dict, preset, resolve_config
from ergoswarm.scenario.runner import (
    config_with_mode,
    corridor_predicate,
    run_centralized,
    run_decentralized,
    static_phi_field,
)

UNIT_SQUARE = BoxDomain(lengths=(1.0, 1.0))


@contextmanager
def criterion(number, name, budget_s):
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, (
            f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"
        )
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        print(
            f"\nACCEPTANCE {number} [{name}]: {status} "
            f"({elapsed:.1f}s / budget {budget_s:.0f}s)"
        )


def random_model_state(model, rng):
    x = rng.normal(0.0, 0.5, size=model.n)
    if isinstance(model, Quadrotor):
        x[6:8] = rng.uniform(-1.0, 1.0, size=2)
    return x


def test_01_insertion_gradient_negativity():
    with criterion(1, "closed-form insertion gradient negativity", 10.0):
        rng = np.random.default_rng(101)
        models = [DoubleIntegrator(), Quadrotor()]
        done = 0
        while done < 1000:
            model = models[done % 2]
            x = random_model_state(model, rng)
            rho = rng.normal(size=model.n)
            A = rng.normal(size=(model.m, model.m))
            R = A @ A.T + 0.1 * np.eye(model.m)
            u_def = rng.uniform(model.u_min, model.u_max)
            htr = model.response(x).T @ rho
            if np.linalg.norm(htr) <= 1e-6:
                continue
            u_best = -np.linalg.solve(R, htr) + u_def
            got = mode_insertion_gradient(rho, x, model, u_best, u_def)
            expected = -float(htr @ np.linalg.solve(R, htr))
            assert got < 0.0
            assert abs(got - expected) <= 1e-10 * abs(expected)
            done += 1


def test_02_insertion_gradient_matches_resimulation():
    with criterion(2, "insertion gradient vs finite-difference oracle", 30.0):
        params = ControllerParams()
        ctx = build_context(UNIT_SQUARE, 5)
        model = DoubleIntegrator()
        rng = np.random.default_rng(202)
        checked = 0
        while checked < 20:
            x0 = np.concatenate(
                [rng.uniform(0.2, 0.8, 2), rng.uniform(-0.1, 0.1, 2)]
            )
            sched = ControlSchedule(
                t0=0.0, horizon=params.horizon, dt=params.dt, pad=model.neutral_control
            )
            mem = ErgodicMemory(
                window=params.memory_window,
                sample_time=params.sample_time,
                xv_indices=model.xv_indices,
            )
            pos = x0.copy()
            for k in range(6):
                mem.append(0.1 * k, pos)
                pos = pos + rng.uniform(-0.02, 0.02, 4)
            t_i = mem.t_latest
            sched = ControlSchedule(
                t0=t_i, horizon=params.horizon, dt=params.dt, pad=model.neutral_control
            )
            phik = np.zeros(ctx.count)
            phik[0] = 1.0
            phik[1 : ctx.count] = 0.05 * rng.normal(size=ctx.count - 1)

            times, states = predict(model, mem.states[-1], sched, params.horizon, params.dt)
            t_e = mem.elapsed() + params.horizon
            past = mem.past_integral(ctx)
            ck = (past + basis_path_integral(ctx, times, model.project(states))) / t_e
            rho = adjoint(times, states, ck, phik, model, sched, ctx, 1.0, t_e)
            u_corr = u_star(states, rho, model, params.r_matrix(2), sched)
            u_sat = saturate(u_corr, model.u_min, model.u_max)
            u_def = sched.grid_samples()
            mig = np.array(
                [
                    mode_insertion_gradient(rho[j], states[j], model, u_sat[j], u_def[j])
                    for j in range(times.size - 1)
                ]
            )
            tau_idx = int(np.argmin(mig))
            if abs(mig[tau_idx]) < 1e-4:
                continue

            def metric(lam):
                ins = None
                if lam > 0:
                    ins = Insertion(
                        times[tau_idx], times[tau_idx] + lam, u_sat[tau_idx]
                    )
                t2, s2 = rollout(
                    model, mem.states[-1], sched, t_i, t_i + params.horizon,
                    params.dt, insertion=ins,
                )
                ck2 = (past + basis_path_integral(ctx, t2, model.project(s2))) / t_e
                return spectral_metric(ck2, phik, ctx.lam, 1.0)

            lam = 1e-4
            fd = (metric(lam) - metric(0.0)) / lam
            assert abs(fd - mig[tau_idx]) / abs(mig[tau_idx]) < 0.05
            checked += 1


def test_03_distributability_equivalence():
    with criterion(3, "stacked step equals per-agent steps", 5.0):
        params = ControllerParams()
        ctx = build_context(UNIT_SQUARE, 5)
        rng = np.random.default_rng(303)
        for model_cls in (DoubleIntegrator, Quadrotor):
            n_agents = 3
            models = [model_cls() for _ in range(n_agents)]
            x0s, schedules, memories = [], [], []
            for i in range(n_agents):
                x = np.zeros(models[i].n)
                x[:2] = rng.uniform(0.2, 0.8, 2)
                if model_cls is Quadrotor:
                    x[2] = 0.5
                mem = ErgodicMemory(
                    window=params.memory_window,
                    sample_time=params.sample_time,
                    xv_indices=models[i].xv_indices,
                )
                for k in range(4):
                    mem.append(0.1 * k, x + 0.01 * k)
                x0s.append(mem.states[-1])
                memories.append(mem)
                schedules.append(
                    ControlSchedule(
                        t0=0.3, horizon=params.horizon, dt=params.dt,
                        pad=models[i].neutral_control,
                    )
                )
            phik = np.zeros(ctx.count)
            phik[0] = 1.0
            out = stacked_control_step(
                models, x0s, 0.3, schedules, memories, phik, ctx, params
            )
            fresh = []
            for i in range(n_agents):
                times, states = predict(
                    models[i], x0s[i], schedules[i], params.horizon, params.dt
                )
                fresh.append(
                    memories[i].past_integral(ctx)
                    + basis_path_integral(ctx, times, models[i].project(states))
                )
            total = np.sum(fresh, axis=0)
            for i in range(n_agents):
                per_agent = control_step(
                    models[i], x0s[i], 0.3, schedules[i], memories[i],
                    (total - fresh[i]) / n_agents, phik, ctx, params,
                    n_agents=n_agents,
                )
                assert np.max(np.abs(per_agent.u_star - out.u_star[i])) < 1e-12


def test_04_consensus_convergence():
    with criterion(4, "consensus averaging and round prediction", 5.0):
        rng = np.random.default_rng(404)
        # complete uniform graph: exact mean in one round
        for n in (3, 5):
            locals_ = rng.normal(size=(n, 8))
            mean = locals_.mean(axis=0)
            out = consensus_round(locals_, complete_uniform(n))
            assert np.max(np.abs(out - mean)) <= 1e-12
            assert rounds_to_tolerance(complete_uniform(n), 1.0, 1e-12) == 1

        # ring of six: network mean conserved every round
        P = metropolis_weights(ring_adjacency(6))
        locals_ = rng.normal(size=(6, 5))
        mean0 = locals_.mean(axis=0)
        for _ in range(50):
            locals_ = consensus_round(locals_, P)
            assert np.max(np.abs(locals_.mean(axis=0) - mean0)) <= 1e-12

        # prediction never underestimates for generic vectors, and is tight
        # within one round on the dominant disagreement subspace
        sigma2 = second_singular_value(P)
        eigvals, eigvecs = np.linalg.eigh(P)
        slow = eigvecs[:, np.isclose(np.abs(eigvals), sigma2)]

        def spread(v):
            return float(np.linalg.norm(v - v.mean(axis=0)))

        for trial in range(5):
            generic = rng.normal(size=(6, 4))
            predicted = rounds_to_tolerance(P, spread(generic), 1e-9)
            vecs, empirical = generic.copy(), 0
            while spread(vecs) > 1e-9:
                vecs = consensus_round(vecs, P)
                empirical += 1
            assert empirical <= predicted

            aligned = slow @ rng.normal(size=(slow.shape[1], 4))
            predicted = rounds_to_tolerance(P, spread(aligned), 1e-9)
            vecs, empirical = aligned.copy(), 0
            while spread(vecs) > 1e-9:
                vecs = consensus_round(vecs, P)
                empirical += 1
            assert abs(predicted - empirical) <= 1


def test_05_decentralized_vs_centralized_coverage():
    with criterion(5, "coverage comparison shape and ratio", 120.0):
        cfg = resolve_config(preset("coverage3"))
        dec = run_decentralized(cfg)
        cen = run_centralized(config_with_mode(cfg, "centralized"))
        e_dec = np.array([r["metric_collective"] for r in dec.records])
        e_cen = np.array([r["metric_collective"] for r in cen.records])
        ts = np.array([r["t"] for r in dec.records])

        assert e_dec[-1] <= 0.15 * e_dec[0], "decentralized decrease < 85%"
        assert e_cen[-1] <= 0.15 * e_cen[0], "centralized decrease < 85%"
        assert e_dec[-1] / e_cen[-1] <= 1.5, "final-time metric ratio above 1.5"
        early = (ts > 0) & (ts < 5.0)
        assert e_dec[early].mean() >= e_cen[early].mean(), (
            "decentralized should trail the centralized scheme early on"
        )


def test_06_trajectory_coefficient_oracle():
    with criterion(6, "trajectory coefficients vs dense quadrature", 10.0):
        ctx = build_context(UNIT_SQUARE, 5)
        rng = np.random.default_rng(606)
        for _ in range(20):
            knots = rng.uniform(0.05, 0.95, size=(4, 2))
            times = np.linspace(0.0, 0.6, 61)
            pts = np.empty((61, 2))
            for j, t in enumerate(times):
                seg = min(int(t / 0.2), 2)
                frac = (t - 0.2 * seg) / 0.2
                pts[j] = knots[seg] + frac * (knots[seg + 1] - knots[seg])
            integral = basis_path_integral(ctx, times, pts)

            oracle = np.zeros(ctx.count)
            for j in range(60):
                ts = np.linspace(times[j], times[j + 1], 21)
                frac = (ts - times[j]) / (times[j + 1] - times[j])
                seg = pts[j] + frac[:, None] * (pts[j + 1] - pts[j])
                w = np.ones(21)
                w[1:-1:2] = 4.0
                w[2:-1:2] = 2.0
                h = (times[j + 1] - times[j]) / 20.0
                oracle += (h / 3.0) * (w @ eval_all(ctx, seg))
            assert np.max(np.abs(integral - oracle)) < 1e-6

        # windowed buffer recomputation equals direct full recomputation
        params = ControllerParams()
        for _ in range(5):
            mem = ErgodicMemory(
                window=params.memory_window,
                sample_time=params.sample_time,
                xv_indices=(0, 1),
            )
            history = []
            for k in range(45):
                x = rng.uniform(0, 1, 2)
                mem.append(0.1 * k, x)
                history.append((0.1 * k, x))
            t_end = history[-1][0]
            kept = [
                (t, x) for t, x in history
                if t >= t_end - params.memory_window - 1e-9
            ]
            direct = basis_path_integral(
                ctx, np.array([t for t, _ in kept]), np.array([x for _, x in kept])
            )
            assert np.max(np.abs(mem.past_integral(ctx) - direct)) < 1e-9


def test_07_basis_suite():
    with criterion(7, "basis orthonormality, gradients, weights", 10.0):
        ctx = build_context(UNIT_SQUARE, 5)
        axes = (np.arange(200) + 0.5) / 200.0
        mesh = np.meshgrid(axes, axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        B = eval_all(ctx, grid)
        gram = B.T @ B / grid.shape[0]
        assert np.max(np.abs(gram - np.eye(ctx.count))) < 1e-6

        rng = np.random.default_rng(707)
        pts = rng.uniform(0.05, 0.95, size=(100, 2))
        grads = grad_all(ctx, pts)
        h = 1e-6
        for axis in range(2):
            d = np.zeros(2)
            d[axis] = h
            fd = (eval_all(ctx, pts + d) - eval_all(ctx, pts - d)) / (2 * h)
            err = np.abs(fd - grads[:, :, axis])
            assert np.max(err / np.maximum(1.0, np.abs(grads[:, :, axis]))) < 1e-6

        tuples = [tuple(k) for k in ctx.index_set.indices]
        assert ctx.lam[tuples.index((0, 0))] == pytest.approx(1.0)
        assert ctx.lam[tuples.index((1, 0))] == pytest.approx(2.0 ** (-1.5), abs=1e-12)
        assert ctx.h[0] == pytest.approx(1.0)
        one_dim = build_context(BoxDomain(lengths=(2.0,)), 3)
        assert one_dim.h[3] == pytest.approx(1.0, abs=1e-12)


def test_08_localization_preset():
    with criterion(8, "bearing-only localization accuracy", 180.0):
        worst_errors = []
        for seed in range(10):
            raw = preset("localization").to_dict()
            raw["seed"] = seed
            cfg = resolve_config(config_from_dict(raw))
            log = run_decentralized(cfg)
            assert not any(rec["obstacle_hit"] for rec in log.records), (
                f"seed {seed}: an agent entered an obstacle"
            )
            last = log.records[-1]
            worst_errors.append(
                max(b["err"] for agent in last["agents"] for b in agent["beliefs"])
            )
        assert float(np.median(worst_errors)) <= 0.05, worst_errors

        # vanishing sensor noise: two-ray triangulation limit
        sensor = SensorModel(variance=1e-6, radius=10.0)
        truth = np.array([0.5, 0.5])
        belief = TargetBelief(mean=[0.45, 0.55], cov=0.04 * np.eye(2))
        vantage = [np.array([0.5, 0.0]), np.array([0.0, 0.5])]
        for i in range(10):
            pos = vantage[i % 2]
            belief = ekf_update(belief, measure(sensor, pos, truth, None), pos, sensor)
        assert np.linalg.norm(belief.mean - truth) <= 1e-3


def test_09_corridor_preset():
    with criterion(9, "corridor coverage: collective beats individuals", 120.0):
        cfg = resolve_config(preset("corridor"))
        field = static_phi_field(cfg)
        inside = corridor_predicate(cfg.phi.corridor_rects)(field.cell_centers())
        assert np.all(field.values.ravel()[~inside] == 0.0), "mass outside corridor"

        log = run_decentralized(cfg)
        first, last = log.records[0], log.records[-1]
        collective_reduction = 1.0 - last["metric_collective"] / first["metric_collective"]
        assert collective_reduction >= 0.80

        individual_reductions = [
            1.0 - last["agents"][j]["metric"] / first["agents"][j]["metric"]
            for j in range(len(cfg.agents))
        ]
        assert min(individual_reductions) < collective_reduction


def test_10_adversarial_insertions_decrease_metrics():
    with criterion(10, "adversarial preset: every insertion improves", 60.0):
        cfg = resolve_config(preset("nash-demo"))
        log = run_decentralized(cfg)
        counts = [0, 0]
        for rec in log.records[1:]:
            for agent in rec["agents"]:
                ins = agent["insertion"]
                if ins is not None:
                    counts[agent["id"]] += 1
                    assert ins["de_achieved"] < 0.0
                    assert ins["lam"] > 0.0
        assert all(c > 0 for c in counts), counts


def test_11_determinism_across_parallelism():
    with criterion(11, "byte-identical logs across worker counts", 60.0):
        raw = preset("coverage3").to_dict()
        raw["duration"] = 5.0
        base = resolve_config(config_from_dict(raw))
        first = run_decentralized(base)

        threaded_cfg = config_from_dict({**base.to_dict(), "workers": 3})
        threaded = run_decentralized(threaded_cfg)
        assert first.jsonl_text() == threaded.jsonl_text()

        again = run_decentralized(config_from_dict(base.to_dict()))
        assert first.jsonl_text() == again.jsonl_text()
