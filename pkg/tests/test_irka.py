"""Delay-free H2 reduction by the rational Krylov fixed point."""

import numpy as np
import pytest

import oracles
from conftest import REF_POLE, REF_RESIDUE, make_siso, random_pr
from delayh2 import (
    DelayedModel,
    DelayH2Error,
    IrkaConfig,
    compute_gap,
    h2_norm_sq,
    hermite_residuals,
    irka_reduce,
    realify_check,
)


def three_pole():
    # partial fractions of 1/((s+1)(s+2)(s+3))
    return make_siso([-1.0, -2.0, -3.0], [0.5, -1.0, 0.5])


def test_exact_recovery_same_order():
    rng = np.random.default_rng(71)
    g = random_pr(rng, 4)
    res = irka_reduce(g, IrkaConfig(order=4))
    assert res.converged
    gap = compute_gap(g, DelayedModel.undelayed(res.model), h2_norm_sq(g))
    assert gap.j < 1e-10


def test_exact_recovery_mimo():
    rng = np.random.default_rng(72)
    g = random_pr(rng, 3, ny=2, nu=2)
    res = irka_reduce(g, IrkaConfig(order=3))
    gap = compute_gap(g, DelayedModel.undelayed(res.model), h2_norm_sq(g))
    assert gap.j < 1e-10


def test_matches_brute_force_order_two():
    g = three_pole()
    gns = h2_norm_sq(g)
    res = irka_reduce(g, IrkaConfig(order=2))
    assert res.converged
    gap = compute_gap(g, DelayedModel.undelayed(res.model), gns).j
    best = oracles.brute_force_reduce_n2(g.poles, g.left, g.right, gns)
    assert abs(gap - best) < 1e-6
    assert gap <= best + 1e-9


def test_reference_core_parameters(ref_core):
    # reported to five digits; the +Im pole carries the -Im residue
    lam = ref_core.poles[np.argmax(ref_core.poles.imag)]
    k = int(np.argmax(ref_core.poles.imag))
    phi = ref_core.left[k, 0] * ref_core.right[k, 0]
    assert lam.real == pytest.approx(REF_POLE.real, abs=1e-3)
    assert lam.imag == pytest.approx(REF_POLE.imag, abs=1e-3)
    assert phi.real == pytest.approx(REF_RESIDUE.real, abs=1e-3)
    assert phi.imag == pytest.approx(REF_RESIDUE.imag, abs=1e-3)
    assert realify_check(ref_core)


def test_hermite_certificate_on_convergence():
    rng = np.random.default_rng(73)
    for _ in range(5):
        g = random_pr(rng, int(rng.integers(4, 9)), ny=2, nu=2)
        res = irka_reduce(g, IrkaConfig(order=2))
        if not res.converged:
            continue
        r = hermite_residuals(g, res)
        scale = max(1.0, h2_norm_sq(g))
        assert np.max(r) < 1e-6 * scale


def test_unconverged_candidate_has_visible_residuals():
    rng = np.random.default_rng(74)
    g = random_pr(rng, 6)
    cand = random_pr(rng, 2)
    r = hermite_residuals(g, cand)
    assert np.max(r) > 1e-6


def test_result_is_real_and_stable():
    rng = np.random.default_rng(75)
    for _ in range(5):
        g = random_pr(rng, int(rng.integers(3, 8)), ny=2, nu=2)
        res = irka_reduce(g, IrkaConfig(order=2, init="random-stable",
                                        seed=int(rng.integers(100))))
        assert realify_check(res.model)
        assert np.all(res.model.poles.real < 0.0)


def test_deterministic_given_seed():
    rng = np.random.default_rng(76)
    g = random_pr(rng, 6, ny=2, nu=2)
    cfg = IrkaConfig(order=3, init="random-stable", seed=11)
    r1 = irka_reduce(g, cfg)
    r2 = irka_reduce(g, cfg)
    assert np.array_equal(r1.model.poles, r2.model.poles)
    assert np.array_equal(r1.model.left, r2.model.left)
    assert np.array_equal(r1.model.right, r2.model.right)
    assert r1.iterations == r2.iterations
    assert r1.final_shift_movement == r2.final_shift_movement


def test_user_supplied_init():
    g = three_pole()
    cfg = IrkaConfig(order=2, init="user", shifts0=(1.0, 2.0),
                     right_dirs0=((1.0,), (1.0,)), left_dirs0=((1.0,), (1.0,)))
    res = irka_reduce(g, cfg)
    assert res.converged


def test_user_init_requires_shifts():
    g = three_pole()
    with pytest.raises(DelayH2Error):
        irka_reduce(g, IrkaConfig(order=2, init="user"))


def test_order_validation():
    g = three_pole()
    with pytest.raises(DelayH2Error):
        irka_reduce(g, IrkaConfig(order=0))
    with pytest.raises(DelayH2Error):
        irka_reduce(g, IrkaConfig(order=4))


def test_unknown_init_mode():
    g = three_pole()
    with pytest.raises(DelayH2Error):
        irka_reduce(g, IrkaConfig(order=2, init="bogus"))


def test_max_iters_returns_best_effort():
    rng = np.random.default_rng(77)
    g = random_pr(rng, 8, ny=2, nu=2)
    res = irka_reduce(g, IrkaConfig(order=3, max_iters=1))
    assert not res.converged
    assert res.iterations == 1
    assert res.model.order == 3
    assert res.final_shift_movement > 0.0
