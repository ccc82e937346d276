"""End-to-end acceptance gate: one test per criterion, each reporting PASS/FAIL.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary section at
the end of the run lists every criterion line.
"""

import time

import numpy as np
import pytest

import pertopt.autodiff as ad
from pertopt.config import default_registry, from_yaml, instantiate, to_yaml
from pertopt.data import LabeledBatch
from pertopt.experiments import (
    RobustTrainer,
    StandardTrainer,
    blob_data,
    clear_model_cache,
    curve_config,
    curve_task,
    trained_model,
)
from pertopt.launch import launch, read_metrics, rerun
from pertopt.models import init_model, standard_train
from pertopt.optim import INF, SGD, Adam, ConstraintSet, FrankWolfeState, SGDConfig, l1q_frank_wolfe_step, l1q_lmo, project
from pertopt.solvers import SolveSpec, probe, robust_train, robustness_curve, solve_perturbation
from graphs import check_random_graph

EPSILONS = [0.0, 0.25, 0.5, 1.0, 2.0]
SEEDS = range(5)
SWEEP = ["model=standard,robust", "optim.epsilon=0.0,0.25,0.5,1.0,2.0"]


def monotone_ok(accs, step=0.02):
    """Non-increasing, allowing one rise of at most ``step``."""
    rises = [b - a for a, b in zip(accs, accs[1:]) if b > a]
    return len(rises) <= 1 and all(r <= step for r in rises)


def pretrained(seed):
    data = blob_data(n_train=2000, n_test=1000, seed=seed)
    arch = instantiate(default_registry.builds("pertopt.models.MlpClassifier", partial=True))
    models = {name: trained_model(name, arch, data, trainer, seed=seed).model for name, trainer in [("standard", StandardTrainer()), ("robust", RobustTrainer())]}
    return data, models


def test_criterion_1_projection_idempotence(report):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    count, worst_idem, worst_feas = 0, 0.0, 0.0
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 7, size=rng.integers(1, 4)))
        x = rng.standard_normal(shape) * 10 ** rng.uniform(-3, 4)
        for p in (1, 2, INF):
            for eps in (0.0, 0.5, 1.0, 10.0):
                c = ConstraintSet(p, eps, per_sample=bool(rng.integers(2)))
                y = project(x, c)
                worst_idem = max(worst_idem, float(np.max(np.abs(project(y, c) - y))))
                worst_feas = max(worst_feas, float(np.max(c.norms(y) - eps * (1 + 1e-12))))
                count += 1
    elapsed = time.perf_counter() - start
    passed = count >= 1000 and worst_idem <= 1e-9 and worst_feas <= 0 and elapsed < 10
    report("criterion 1 projection idempotence", passed, f"{count} projections, max |P(P(x)) - P(x)| = {worst_idem:.1e}, {elapsed:.1f} s")
    assert passed


def test_criterion_2_gradient_correctness(report):
    start = time.perf_counter()
    errors = [check_random_graph(seed) for seed in range(200)]
    elapsed = time.perf_counter() - start
    passed = max(errors) < 1e-4 and elapsed < 30
    report("criterion 2 gradient correctness", passed, f"{len(errors)} graphs, max rel err {max(errors):.1e}, {elapsed:.1f} s")
    assert passed


def test_criterion_3_linear_pgd_oracle(report):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 11))
        w, x, b, eps = rng.standard_normal(d), rng.standard_normal((1, d)), float(rng.standard_normal()), float(rng.uniform(0.1, 2.0))
        model = init_model([d, 1], seed=0)
        model.load_state({"weight0": w.reshape(d, 1), "bias0": np.array([b])})
        spec = SolveSpec(steps=20, lr=0.1, constraint=ConstraintSet(2, eps, per_sample=True), criterion=lambda out, t: ad.sum(out), normalize_grad=True)
        achieved = solve_perturbation(model, LabeledBatch(x, [0]), spec).final_criterion
        optimum = float(x[0] @ w) + b - eps * np.linalg.norm(w)
        worst = max(worst, abs(achieved - optimum) / max(abs(optimum), 1e-12))
    elapsed = time.perf_counter() - start
    passed = worst <= 0.01 and elapsed < 10
    report("criterion 3 analytic PGD oracle", passed, f"20 instances, worst relative gap {worst:.1e}, {elapsed:.1f} s")
    assert passed


def test_criterion_4_robustness_curve_shape(report):
    start = time.perf_counter()
    curves = {"standard": [], "robust": []}
    clean = {"standard": [], "robust": []}
    for seed in SEEDS:
        data, models = pretrained(seed)
        for pt in robustness_curve(models, data.test, EPSILONS, steps=20, lr=0.1, seed=seed):
            curves[pt.model].append((seed, pt.epsilon, pt.adv_accuracy))
    elapsed = time.perf_counter() - start
    per_curve = {(m, s): [a for s2, _, a in rows if s2 == s] for m, rows in curves.items() for s in SEEDS}
    monotone = all(monotone_ok(accs) for accs in per_curve.values())
    at = {m: np.mean([a for _, e, a in rows if e == 0.5]) for m, rows in curves.items()}
    for m, rows in curves.items():
        clean[m] = np.mean([a for _, e, a in rows if e == 0.0])
    gap = at["robust"] - at["standard"]
    passed = monotone and gap >= 0.10 and elapsed < 300
    detail = (
        f"eps=0.5 adv acc robust {at['robust']:.3f} vs standard {at['standard']:.3f} (gap {100 * gap:.1f} pts), "
        f"monotone={monotone}, clean robust {clean['robust']:.3f} / standard {clean['standard']:.3f}, {elapsed:.0f} s"
    )
    report("criterion 4 robustness-curve shape", passed, detail)
    assert passed


def test_criterion_5_zero_budget_robust_training(report):
    start = time.perf_counter()
    data = blob_data(seed=0)
    a, b = init_model([2, 32, 2], seed=0), init_model([2, 32, 2], seed=0)
    outer = SGDConfig(lr=0.1, momentum=0.9)
    standard_train(a, data.train_batches, outer, epochs=5)
    inner = SolveSpec(steps=10, lr=0.1, constraint=ConstraintSet(2, 0.0, per_sample=True), normalize_grad=True)
    robust_train(b, data.train_batches, inner, outer, epochs=5)
    elapsed = time.perf_counter() - start
    same = all(a.state()[k].tobytes() == b.state()[k].tobytes() for k in a.state())
    passed = same and elapsed < 60
    report("criterion 5 zero-budget robust training", passed, f"bitwise identical parameters: {same}, {elapsed:.1f} s")
    assert passed


def test_criterion_6_config_fidelity(report):
    start = time.perf_counter()
    node = default_registry.builds("pertopt.optim.Adam")
    text = to_yaml(node)
    lines = text.splitlines()
    wanted = ["params: ???", "lr: 0.001", "eps: 1.0e-08", "amsgrad: false"]
    in_order = all(w in lines for w in wanted) and [lines.index(w) for w in wanted] == sorted(lines.index(w) for w in wanted)
    exact = text == "_target_: pertopt.optim.Adam\nparams: ???\nlr: 0.001\nbetas:\n- 0.9\n- 0.999\neps: 1.0e-08\nweight_decay: 0\namsgrad: false\n"
    round_trip = to_yaml(from_yaml(text)) == text and from_yaml(text) == node

    def run(opt_factory):
        p = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = opt_factory([p])
        for _ in range(3):
            opt.zero_grad()
            ad.backward(ad.sum(p * p))
            opt.step()
        return p.data.tobytes(), (opt.lr, opt.betas, opt.eps, opt.weight_decay, opt.amsgrad)

    factory = instantiate(default_registry.builds("pertopt.optim.Adam", partial=True))
    matches = run(factory) == run(Adam) and run(lambda ps: instantiate(node, params=ps)) == run(Adam)
    elapsed = time.perf_counter() - start
    passed = in_order and exact and round_trip and matches and elapsed < 1
    report("criterion 6 config fidelity", passed, f"ordered={in_order} exact={exact} round-trip={round_trip} instantiate==direct={matches}, {elapsed:.2f} s")
    assert passed


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    seen_before = {}

    def task(cfg, run_dir):
        seen_before[run_dir] = (run_dir / "config.yaml").exists() and from_yaml((run_dir / "config.yaml").read_text()) == cfg
        return curve_task(cfg)

    start = time.perf_counter()
    records = launch(curve_config(), task, SWEEP, multirun=True, output_dir=root)
    return root, records, seen_before, time.perf_counter() - start


def test_criterion_7_sweep_reproducibility(report, sweep):
    root, records, seen_before, elapsed = sweep
    start = time.perf_counter()
    clear_model_cache()
    reproduced = []
    for r in records:
        again = rerun(r.run_dir, curve_task, output_dir=root / "rerun")
        reproduced.append((again.run_dir / "metrics.csv").read_bytes() == (r.run_dir / "metrics.csv").read_bytes())
    elapsed += time.perf_counter() - start
    cells = sorted((r.metrics[0]["model"], r.metrics[0]["epsilon"]) for r in records if r.ok)
    complete = len(records) == 10 and cells == sorted((m, e) for m in ("standard", "robust") for e in EPSILONS)
    before = len(seen_before) == 10 and all(seen_before.values())
    passed = complete and before and all(reproduced) and elapsed < 300
    report("criterion 7 sweep completeness and reproducibility", passed, f"{len(records)} jobs, config-before-task={before}, reruns bitwise {sum(reproduced)}/10, {elapsed:.0f} s")
    assert passed


def test_sweep_robust_rows_dominate(sweep):
    _, records, _, _ = sweep
    acc = {(r.metrics[0]["model"], r.metrics[0]["epsilon"]): r.metrics[0]["adv_accuracy"] for r in records}
    for eps in EPSILONS[1:]:
        assert acc["robust", eps] >= acc["standard", eps]
    for r in records:
        assert read_metrics(r.run_dir / "metrics.csv")[0].keys() == {"model", "epsilon", "adv_accuracy", "seed"}


def test_criterion_8_frank_wolfe_feasibility(report):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    steps, infeasible, vertex_mismatch = 0, 0, 0
    for chain in range(100):
        dim, rows = int(rng.integers(1, 50)), int(rng.integers(1, 4))
        eps = float(10 ** rng.uniform(-3, 3))
        per_sample = bool(rng.integers(2))
        c = ConstraintSet(1, eps, per_sample=per_sample)
        x = project(rng.standard_normal((rows, dim)) * eps, c)
        state = FrankWolfeState(eps, lr=float(rng.uniform(1e-3, 1.0)), q=float(rng.uniform(1e-3, 1.0)), per_sample=per_sample)
        for _ in range(10):
            g = rng.standard_normal(x.shape) * 10 ** rng.uniform(-3, 3)
            (x,) = l1q_frank_wolfe_step([x], [g], state)
            infeasible += bool(np.any(c.norms(x) > eps))
            steps += 1
        g = rng.standard_normal(x.shape)
        (v,) = l1q_frank_wolfe_step([x], [g], FrankWolfeState(eps, lr=1.0, q=state.q, per_sample=per_sample))
        vertex_mismatch += v.tobytes() != l1q_lmo(g, eps, state.q, per_sample).tobytes()
        infeasible += bool(np.any(c.norms(v) > eps))
    elapsed = time.perf_counter() - start
    passed = steps >= 1000 and infeasible == 0 and vertex_mismatch == 0 and elapsed < 5
    report("criterion 8 Frank-Wolfe feasibility", passed, f"{steps} steps, {infeasible} infeasible, {vertex_mismatch} lr=1 vertex mismatches, {elapsed:.2f} s")
    assert passed


def test_criterion_9_probe_success(report):
    _, models = pretrained(0)
    start = time.perf_counter()
    hits = 0
    for seed in range(10):
        res = probe(models["standard"], target=seed % 2, steps=50, seed=seed)
        hits += res.success
    elapsed = time.perf_counter() - start
    passed = hits >= 8 and elapsed < 30
    report("criterion 9 probe success", passed, f"argmax reached target in {hits}/10 seeds, {elapsed:.1f} s")
    assert passed
