"""Tests for the synthetic multi-task family builder.

The builder dials each task to a requested drafter misfit r_q and verifier
misfit r_p (average total variation against the latent per-task posterior), so
most tests check that the measured misfits land on target and that the derived
structure (token ranges, boundary row, matched entropy) holds.
"""

import numpy as np
import pytest

from specfair import (
    FamilySpec,
    InfeasibleFamilyError,
    TaskSpec,
    entropy,
    make_synthetic_family,
    token_range_classifier,
    total_variation,
)


def measured_misfit(model, posterior, task):
    acc = 0.0
    for prefix, w in zip(task.prefixes, task.weights):
        acc += w * total_variation(posterior.predict(prefix), model.predict(prefix))
    return acc


def two_task_spec(r_p=(0.02, 0.02), r_q=(0.05, 0.3), **kw):
    return FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=r_p[0], r_q=r_q[0]),
            TaskSpec(id="b", r_p=r_p[1], r_q=r_q[1]),
        ),
        prefix_length=2,
        **kw,
    )


def test_build_is_deterministic():
    spec = two_task_spec()
    fam1 = make_synthetic_family(spec, vocab_size=16, order=1, seed=42)
    fam2 = make_synthetic_family(spec, vocab_size=16, order=1, seed=42)
    assert fam1.verifier.fingerprint() == fam2.verifier.fingerprint()
    assert fam1.drafter.fingerprint() == fam2.drafter.fingerprint()
    fam3 = make_synthetic_family(spec, vocab_size=16, order=1, seed=43)
    assert fam3.drafter.fingerprint() != fam1.drafter.fingerprint()


def test_measured_misfits_hit_targets():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.01, r_q=0.05),
            TaskSpec(id="b", r_p=0.03, r_q=0.2),
            TaskSpec(id="c", r_p=0.05, r_q=0.4),
        ),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=48, order=1, seed=7)
    for task_spec in spec.tasks:
        task = next(t for t in fam.family.tasks if t.id == task_spec.id)
        r_q = measured_misfit(fam.drafter, task.posterior, task)
        r_p = measured_misfit(fam.verifier, task.posterior, task)
        assert abs(r_q - task_spec.r_q) <= 0.02
        assert abs(r_p - task_spec.r_p) <= 0.02


def test_zero_misfit_reproduces_posterior():
    spec = two_task_spec(r_p=(0.0, 0.0), r_q=(0.0, 0.0))
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=9)
    for task in fam.family.tasks:
        for prefix in task.prefixes:
            np.testing.assert_array_equal(
                fam.drafter.predict(prefix), task.posterior.predict(prefix)
            )
            np.testing.assert_array_equal(
                fam.verifier.predict(prefix), task.posterior.predict(prefix)
            )


def test_token_ranges_are_disjoint_and_sized():
    # vocab 16 over 3 tasks leaves ranges of 5 tokens, so support must fit
    spec = FamilySpec(
        tasks=tuple(
            TaskSpec(id=f"t{i}", r_p=0.01, r_q=0.1, prefix_support=4) for i in range(3)
        ),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=3)
    seen = set()
    for tid, (lo, hi) in fam.ranges.items():
        assert hi - lo == 16 // 3
        span = set(range(lo, hi))
        assert not span & seen
        seen |= span
    # one leftover token stays unassigned
    assert len(seen) == 15


def test_classifier_maps_first_token():
    spec = two_task_spec()
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=1)
    classify = token_range_classifier(fam.ranges)
    lo_a, hi_a = fam.ranges["a"]
    lo_b, hi_b = fam.ranges["b"]
    assert classify([lo_a]) == "a"
    assert classify([hi_b - 1, lo_a]) == "b"
    assert classify([]) is None


def test_task_prefixes_stay_in_range():
    spec = two_task_spec()
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=11)
    classify = token_range_classifier(fam.ranges)
    for task in fam.family.tasks:
        for prefix in task.prefixes:
            assert classify(prefix) == task.id
            lo, hi = fam.ranges[task.id]
            assert all(lo <= t < hi for t in prefix)


def test_boundary_row_mixes_priors():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.0, r_q=0.0, prior=0.75),
            TaskSpec(id="b", r_p=0.0, r_q=0.0, prior=0.25),
        ),
        prefix_length=2,
    )
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=2)
    for model in (fam.verifier, fam.drafter):
        root = model.predict([])
        lo_a, hi_a = fam.ranges["a"]
        lo_b, hi_b = fam.ranges["b"]
        assert root[lo_a:hi_a].sum() == pytest.approx(0.75, abs=1e-6)
        assert root[lo_b:hi_b].sum() == pytest.approx(0.25, abs=1e-6)


def test_matched_entropy_equalizes_posterior_entropy():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.02, r_q=0.05),
            TaskSpec(id="b", r_p=0.02, r_q=0.35),
        ),
        prefix_length=2,
        matched_entropy=True,
    )
    fam = make_synthetic_family(spec, vocab_size=32, order=1, seed=13)
    avg = []
    for task in fam.family.tasks:
        h = sum(
            w * entropy(task.posterior.predict(pfx))
            for pfx, w in zip(task.prefixes, task.weights)
        )
        avg.append(h)
    assert abs(avg[0] - avg[1]) <= 1e-9


def test_unmatched_entropy_builds_too():
    spec = two_task_spec(matched_entropy=False)
    fam = make_synthetic_family(spec, vocab_size=16, order=1, seed=17)
    assert len(fam.family.tasks) == 2


def test_order_two_family():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.01, r_q=0.1, prefix_support=3),
            TaskSpec(id="b", r_p=0.01, r_q=0.2, prefix_support=3),
        ),
        prefix_length=3,
    )
    fam = make_synthetic_family(spec, vocab_size=8, order=2, seed=19)
    for task in fam.family.tasks:
        assert all(len(p) == 3 for p in task.prefixes)
        r_q = measured_misfit(fam.drafter, task.posterior, task)
        assert abs(r_q - 0.15) <= 0.06  # per-task targets 0.1 and 0.2


def test_infeasible_misfit_raises():
    # with a range of 4 tokens the reachable misfit tops out at 1 - 1/4
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.0, r_q=0.0, prefix_support=2),
            TaskSpec(id="b", r_p=0.0, r_q=0.9, prefix_support=2),
        ),
        prefix_length=2,
    )
    with pytest.raises(InfeasibleFamilyError):
        make_synthetic_family(spec, vocab_size=8, order=1, seed=23)


def test_vocab_too_small_raises():
    spec = two_task_spec()
    with pytest.raises(InfeasibleFamilyError):
        make_synthetic_family(spec, vocab_size=3, order=1, seed=29)


def test_support_larger_than_range_raises():
    spec = FamilySpec(
        tasks=(
            TaskSpec(id="a", r_p=0.01, r_q=0.1, prefix_support=50),
            TaskSpec(id="b", r_p=0.01, r_q=0.1, prefix_support=50),
        ),
        prefix_length=1,
    )
    with pytest.raises(InfeasibleFamilyError):
        make_synthetic_family(spec, vocab_size=8, order=1, seed=31)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(id="x", r_p=-0.1, r_q=0.1)
    with pytest.raises(ValueError):
        TaskSpec(id="x", r_p=0.1, r_q=1.0)
    with pytest.raises(ValueError):
        TaskSpec(id="x", r_p=0.1, r_q=0.1, prior=-1.0)
    with pytest.raises(ValueError):
        FamilySpec(tasks=(TaskSpec(id="only", r_p=0.0, r_q=0.0),), prefix_length=1)
