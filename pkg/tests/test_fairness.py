"""Tests for per-task metrics, the unfairness score, and the bound validators."""

import math

import numpy as np
import pytest

from specfair import (
    FamilySpec,
    SpecConfig,
    Task,
    TabularSoftmaxModel,
    TaskFamily,
    TaskSpec,
    certified_envelope,
    estimate_representation,
    family_metrics,
    make_synthetic_family,
    metrics_csv_rows,
    sampled_task_metrics,
    speedup,
    task_metrics,
    token_range_classifier,
    unfairness,
    validate_chain,
    validate_disparity_condition,
    validate_fitness_bound,
)
from specfair.rng import substream

CFG = SpecConfig(gamma=4, cost_ratio=0.1)


def dense_model(rng, vocab, scale=1.5):
    m = TabularSoftmaxModel(vocab_size=vocab, order=1)
    for t in [-1] + list(range(vocab)):
        m.set_row((t,), rng.normal(scale=scale, size=vocab))
    return m


def simple_task(vocab=6):
    return Task(id="t", prefixes=((0,), (1,)), weights=np.array([0.25, 0.75]))


# ---------------------------------------------------------------------------
# Task / TaskFamily plumbing


def test_task_renormalizes_weight_drift():
    t = Task(id="t", prefixes=((0,), (1,)), weights=np.array([0.5, 0.5 + 1e-7]))
    assert abs(t.weights.sum() - 1.0) < 1e-15


def test_task_rejects_bad_weights():
    with pytest.raises(ValueError):
        Task(id="t", prefixes=((0,), (1,)), weights=np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        Task(id="t", prefixes=((0,), (1,)), weights=np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        Task(id="t", prefixes=(), weights=np.array([]))


def test_task_family_needs_unique_ids():
    a = Task(id="a", prefixes=((0,),), weights=np.array([1.0]))
    b = Task(id="a", prefixes=((1,),), weights=np.array([1.0]))
    with pytest.raises(ValueError):
        TaskFamily(tasks=(a, b))
    with pytest.raises(ValueError):
        TaskFamily(tasks=(a,))


def test_sample_prefix_follows_weights():
    t = Task(id="t", prefixes=((0,), (1,)), weights=np.array([0.2, 0.8]))
    rng = substream(55, "fairness", "sample")
    n = 5000
    ones = sum(t.sample_prefix(rng) == (1,) for _ in range(n))
    sigma = math.sqrt(0.8 * 0.2 / n)
    assert abs(ones / n - 0.8) <= 4 * sigma


# ---------------------------------------------------------------------------
# metrics


def test_perfect_drafter_metrics():
    rng = substream(55, "fairness", "perfect")
    p = dense_model(rng, 6)
    q = p.clone()
    m = task_metrics(p, q, simple_task(), CFG)
    assert m.alpha == pytest.approx(1.0, abs=1e-12)
    assert m.kl == 0.0
    # full acceptance emits gamma+1 tokens per verifier pass
    assert m.s == pytest.approx(5.0 / 1.4, rel=1e-12)
    assert math.isnan(m.r_q)
    assert m.exact


def test_metrics_single_prefix_equals_pointwise():
    from specfair import acceptance_overlap, cross_entropy, kl_divergence

    rng = substream(55, "fairness", "pointwise")
    p = dense_model(rng, 5)
    q = dense_model(rng, 5)
    t = Task(id="t", prefixes=((2,),), weights=np.array([1.0]))
    m = task_metrics(p, q, t, CFG)
    pr, qr = p.predict([2]), q.predict([2])
    assert m.alpha == pytest.approx(acceptance_overlap(pr, qr), abs=1e-15)
    assert m.kl == pytest.approx(kl_divergence(pr, qr), abs=1e-15)
    assert m.ce == pytest.approx(cross_entropy(pr, qr), abs=1e-15)
    assert m.s == pytest.approx(speedup(acceptance_overlap(pr, qr), CFG), rel=1e-12)


def test_metrics_ce_dominates_kl():
    rng = substream(55, "fairness", "cekl")
    p = dense_model(rng, 8)
    q = dense_model(rng, 8)
    m = task_metrics(p, q, simple_task(8), CFG)
    assert m.ce >= m.kl >= 0.0


def test_family_alpha_tracks_drafter_misfit():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="good", r_p=0.0, r_q=0.1),
            TaskSpec(id="bad", r_p=0.0, r_q=0.3),
        ),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=101)
    metrics = family_metrics(fam.verifier, fam.drafter, fam.family, CFG)
    by_id = {m.task_id: m for m in metrics}
    # with a perfect verifier (r_p = 0) acceptance is exactly 1 - r_q
    assert by_id["good"].alpha == pytest.approx(0.9, abs=1e-9)
    assert by_id["bad"].alpha == pytest.approx(0.7, abs=1e-9)


def test_sampled_metrics_agree_with_exact():
    spec = FamilySpec(
        tasks=(TaskSpec(id="a", r_p=0.02, r_q=0.1), TaskSpec(id="b", r_p=0.02, r_q=0.3)),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=103)
    task = fam.family.tasks[1]
    exact = task_metrics(fam.verifier, fam.drafter, task, CFG)
    est, err = sampled_task_metrics(
        fam.verifier, fam.drafter, task, CFG, 400, substream(55, "fairness", "mc")
    )
    assert not est.exact
    for f in ("alpha", "kl", "ce", "s"):
        tol = 4.0 * err[f] + 1e-9
        assert abs(getattr(est, f) - getattr(exact, f)) <= tol


# ---------------------------------------------------------------------------
# unfairness and the certified envelope


def test_unfairness_frozen_values():
    assert unfairness([1.3, 1.3, 1.3]) == 0.0
    assert unfairness([0.47, 1.08]) == pytest.approx((1.08 - 0.47) ** 2 / 2.0, abs=1e-15)
    assert unfairness([0.47, 1.08]) == pytest.approx(0.18605, abs=1e-9)


def test_unfairness_shift_invariant():
    rng = substream(55, "fairness", "shift")
    d = rng.uniform(1.0, 3.0, size=6)
    assert unfairness(d) == pytest.approx(unfairness(d + 12.5), rel=1e-12)


def test_unfairness_rejects_empty():
    with pytest.raises(ValueError):
        unfairness([])


def test_envelope_frozen_values():
    # d = 0 pins the f argument at the clamp just below 1
    assert certified_envelope(0.0, CFG) == pytest.approx(speedup(1.0 - 1e-9, CFG), rel=1e-12)
    # d = 2 drives the argument to 0, leaving 1/(gamma c + 1)
    assert certified_envelope(2.0, CFG) == pytest.approx(1.0 / 1.4, abs=1e-12)
    assert certified_envelope(50.0, CFG) == pytest.approx(1.0 / 1.4, abs=1e-12)


def test_envelope_monotone_decreasing():
    grid = np.linspace(0.0, 3.0, 200)
    vals = [certified_envelope(d, CFG) for d in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        certified_envelope(-0.1, CFG)


# ---------------------------------------------------------------------------
# bound validators


def build_default_like_family(seed=211):
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="t0", r_p=0.01, r_q=0.05),
            TaskSpec(id="t1", r_p=0.03, r_q=0.2),
            TaskSpec(id="t2", r_p=0.05, r_q=0.4),
        ),
        prefix_length=2,
    )
    return make_synthetic_family(spec, vocab_size=48, order=1, seed=seed)


def test_chain_holds_on_family():
    fam = build_default_like_family()
    for gamma in (1, 2, 4, 8):
        cfg = SpecConfig(gamma=gamma, cost_ratio=0.1)
        for rep in validate_chain(fam.verifier, fam.drafter, fam.family, cfg):
            assert rep.ok, rep
            assert rep.s_expected >= rep.s_at_mean_alpha - 1e-9
            assert rep.s_at_mean_alpha >= rep.kl_bound - 1e-9
            assert rep.kl_bound >= rep.ce_bound - 1e-9


def test_chain_gamma_one_has_no_jensen_gap():
    # f is linear when gamma = 1, so expectation and plug-in forms agree
    fam = build_default_like_family()
    cfg = SpecConfig(gamma=1, cost_ratio=0.1)
    for rep in validate_chain(fam.verifier, fam.drafter, fam.family, cfg):
        assert rep.s_expected == pytest.approx(rep.s_at_mean_alpha, abs=1e-12)


def test_fitness_bound_on_family():
    fam = build_default_like_family()
    metrics = family_metrics(fam.verifier, fam.drafter, fam.family, CFG)
    for rep in validate_fitness_bound(metrics):
        assert not rep.skipped
        assert rep.ok, rep
        assert rep.deviation <= rep.r_p + 1e-9


def test_fitness_bound_skips_inverted_misfits():
    spec = FamilySpec(
        tasks=(TaskSpec(id="a", r_p=0.3, r_q=0.1), TaskSpec(id="b", r_p=0.02, r_q=0.2)),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=223)
    metrics = family_metrics(fam.verifier, fam.drafter, fam.family, CFG)
    reports = {r.task_id: r for r in validate_fitness_bound(metrics)}
    assert reports["a"].skipped
    assert reports["a"].ok
    assert not reports["b"].skipped


def test_disparity_condition_met():
    spec = FamilySpec(
        tasks=(TaskSpec(id="i", r_p=0.02, r_q=0.1), TaskSpec(id="j", r_p=0.02, r_q=0.4)),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=227)
    metrics = {m.task_id: m for m in family_metrics(fam.verifier, fam.drafter, fam.family, CFG)}
    rep = validate_disparity_condition(metrics["i"], metrics["j"], CFG)
    assert rep.condition_met
    assert rep.ok, rep
    assert rep.alpha_gap > 0.0
    assert rep.certified_gap >= rep.required_gap - 1e-9
    assert rep.expected_gap > 0.0


def test_disparity_condition_not_met_is_vacuous():
    spec = FamilySpec(
        tasks=(TaskSpec(id="i", r_p=0.02, r_q=0.1), TaskSpec(id="j", r_p=0.02, r_q=0.12)),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=229)
    metrics = {m.task_id: m for m in family_metrics(fam.verifier, fam.drafter, fam.family, CFG)}
    rep = validate_disparity_condition(metrics["i"], metrics["j"], CFG)
    assert not rep.condition_met
    assert rep.ok


# ---------------------------------------------------------------------------
# representation estimation


def test_representation_matches_priors():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="big", r_p=0.0, r_q=0.05, prior=0.8),
            TaskSpec(id="small", r_p=0.0, r_q=0.05, prior=0.2),
        ),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=233)
    k = 20000
    est = estimate_representation(
        fam.drafter, fam.classifier, fam.family.ids(), k, substream(55, "fairness", "rep")
    )
    probs = dict(est.ranked)
    sigma = math.sqrt(0.8 * 0.2 / k)
    assert abs(probs["big"] - 0.8) <= 4 * sigma + est.rejected / k
    assert est.ranked[0][0] == "big"
    assert est.samples == k


def test_representation_excludes_rejected_from_normalization():
    # drafter that places half its first-token mass outside any task range
    m = TabularSoftmaxModel(vocab_size=4, order=1)
    row = np.log(np.array([0.25, 0.25, 0.25, 0.25]))
    m.set_row((-1,), row)
    for t in range(4):
        m.set_row((t,), row)
    classify = token_range_classifier({"a": (0, 1), "b": (1, 2)})
    est = estimate_representation(
        m, classify, ["a", "b"], 8000, substream(55, "fairness", "rej")
    )
    assert est.rejected > 0
    total = sum(p for _, p in est.ranked)
    assert total == pytest.approx(1.0, abs=1e-12)
    probs = dict(est.ranked)
    assert abs(probs["a"] - 0.5) <= 0.05


def test_representation_deterministic():
    fam = build_default_like_family()
    a = estimate_representation(
        fam.drafter, fam.classifier, fam.family.ids(), 500, substream(9, "rep")
    )
    b = estimate_representation(
        fam.drafter, fam.classifier, fam.family.ids(), 500, substream(9, "rep")
    )
    assert a == b


# ---------------------------------------------------------------------------
# CSV rows


def test_metrics_csv_rows_shape_and_precision():
    fam = build_default_like_family()
    metrics = family_metrics(fam.verifier, fam.drafter, fam.family, CFG)
    rows = metrics_csv_rows(metrics, CFG)
    assert rows[0] == "task,alpha,kl,ce,speedup,r_p,r_q,envelope"
    assert len(rows) == 4
    for row, m in zip(rows[1:], metrics):
        fields = row.split(",")
        assert fields[0] == m.task_id
        assert len(fields) == 8
        # 17 significant digits survive a float round trip
        assert float(fields[1]) == m.alpha
        assert float(fields[3]) == m.ce
