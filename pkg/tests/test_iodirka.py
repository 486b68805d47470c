"""Alternating reduction loop: core IRKA pass + delay step, certified."""

import dataclasses

import numpy as np
import pytest

from conftest import random_pr
from delayh2 import (
    DelayBlock,
    DelayedModel,
    DelayH2Error,
    DelaySearchConfig,
    IoDirkaConfig,
    IrkaConfig,
    certify,
    compute_gap,
    h2_norm_sq,
    hermite_residuals,
    io_dirka,
    irka_reduce,
    model_from_snapshot,
    optimality_residuals,
)

SMALL_SEARCH = DelaySearchConfig(grid_points_per_channel=60, tau_max=4.0,
                                 extend_box=False)


def small_report(seed=91, order_full=6, order_red=2, **kw):
    rng = np.random.default_rng(seed)
    g = random_pr(rng, order_full)
    cfg = IoDirkaConfig(order=order_red, search=SMALL_SEARCH,
                        outer_max_iters=60, **kw)
    return g, io_dirka(g, cfg)


def test_exact_recovery_keeps_zero_delays():
    rng = np.random.default_rng(92)
    g = random_pr(rng, 4)
    rep = io_dirka(g, IoDirkaConfig(order=4, search=SMALL_SEARCH))
    assert rep.converged
    assert rep.gap.j < 1e-9
    assert rep.model.input_delays.delays == (0.0,)
    assert rep.model.output_delays.delays == (0.0,)


def test_delay_free_masks_reduce_to_plain_irka():
    rng = np.random.default_rng(93)
    g = random_pr(rng, 6)
    search = dataclasses.replace(SMALL_SEARCH, input_mask=(False,),
                                 output_mask=(False,))
    rep = io_dirka(g, IoDirkaConfig(order=2, search=search))
    assert rep.converged
    assert rep.model.input_delays.delays == (0.0,)
    assert rep.residuals.delay_in == (0.0,)
    assert rep.residuals.delay_out == (0.0,)
    direct = irka_reduce(g, IrkaConfig(order=2))
    assert np.allclose(rep.model.core.poles, direct.model.poles,
                       rtol=1e-8, atol=1e-10)
    r = hermite_residuals(g, rep.model.core)
    assert np.max(r) < 1e-6 * max(1.0, h2_norm_sq(g))


def test_certify_agrees_with_report():
    g, rep = small_report(94)
    again = certify(g, rep)
    assert again.max_residual() == rep.residuals.max_residual()
    assert again.interp_right == rep.residuals.interp_right
    assert again.delay_in == rep.residuals.delay_in


def test_certify_detects_tampering():
    g, rep = small_report(95)
    hd = rep.model
    if hd.input_delays.mask[0]:
        moved = DelayBlock((hd.input_delays.delays[0] + 0.1,),
                           hd.input_delays.mask)
        tampered = DelayedModel(hd.core, moved, hd.output_delays)
    else:
        moved = DelayBlock((hd.output_delays.delays[0] + 0.1,),
                           hd.output_delays.mask)
        tampered = DelayedModel(hd.core, hd.input_delays, moved)
    bad = dataclasses.replace(rep, model=tampered)
    with pytest.raises(DelayH2Error):
        certify(g, bad)


def test_perturbed_delay_grows_residual():
    g, rep = small_report(96)
    assert rep.converged
    hd = rep.model
    moved = DelayBlock((hd.input_delays.delays[0] + 0.1,), (True,))
    r0 = rep.residuals.max_delay()
    r1 = optimality_residuals(g, DelayedModel(hd.core, moved,
                                              hd.output_delays)).max_delay()
    assert r1 > 10.0 * max(r0, 1e-12)


def test_trace_gap_recomputable_bit_identical():
    g, rep = small_report(97)
    gns = rep.norm_g_sq
    for entry in rep.trace:
        hd = model_from_snapshot(entry)
        gap = compute_gap(g, hd, gns)
        assert gap.j == entry.gap.j
        assert gap.cross == entry.gap.cross
        assert gap.norm_h_sq == entry.gap.norm_h_sq


def test_trace_alternating_consistency():
    g, rep = small_report(98)
    from delayh2 import build_gtilde
    for entry in rep.trace:
        hd = model_from_snapshot(entry)
        gt = build_gtilde(g, hd.input_delays, hd.output_delays)
        r = hermite_residuals(gt, hd.core)
        if entry.irka_converged:
            assert np.max(r) < 1e-5 * max(1.0, h2_norm_sq(g))


def test_stopping_modes_all_converge():
    for mode in ("pole-variation", "optimality-residual", "h2-error"):
        tol = 1e-8 if mode == "optimality-residual" else 1e-6
        rng = np.random.default_rng(99)
        g = random_pr(rng, 6)
        rep = io_dirka(g, IoDirkaConfig(order=2, search=SMALL_SEARCH,
                                        stopping_mode=mode, outer_tol=tol,
                                        outer_max_iters=80))
        assert rep.converged, mode
        if mode == "optimality-residual":
            assert rep.residuals_before_final_pass.max_residual() < tol


def test_outer_max_returns_best_effort():
    rng = np.random.default_rng(100)
    g = random_pr(rng, 6)
    rep = io_dirka(g, IoDirkaConfig(order=2, search=SMALL_SEARCH,
                                    outer_max_iters=1))
    assert not rep.converged
    assert rep.outer_iterations == 1
    assert len(rep.trace) == 1
    assert rep.gap.j >= 0.0


def test_accelerator_off_matches_fixed_point():
    g, rep_acc = small_report(101, accelerate="aitken")
    _, rep_plain = small_report(101, accelerate="none")
    assert rep_acc.converged and rep_plain.converged
    a = rep_acc.model.input_delays.as_array()
    b = rep_plain.model.input_delays.as_array()
    assert np.max(np.abs(a - b)) < 1e-4
    assert rep_acc.gap.j == pytest.approx(rep_plain.gap.j, rel=1e-6, abs=1e-12)


def test_explicit_init_delays_respected():
    # the first core is reduced from the surrogate at the initial delays,
    # so a nonzero init must change the first-iteration poles
    rng = np.random.default_rng(102)
    g = random_pr(rng, 6)
    base = dict(order=2, search=SMALL_SEARCH, outer_max_iters=1,
                final_irka_pass=False)
    rep0 = io_dirka(g, IoDirkaConfig(**base))
    rep1 = io_dirka(g, IoDirkaConfig(init_input_delays=(1.5,),
                                     init_output_delays=(0.5,), **base))
    p0 = np.asarray(rep0.trace[0].poles)
    p1 = np.asarray(rep1.trace[0].poles)
    assert np.max(np.abs(p0 - p1)) > 1e-6


def test_correlation_init_runs():
    rng = np.random.default_rng(103)
    g = random_pr(rng, 6)
    rep = io_dirka(g, IoDirkaConfig(order=2, search=SMALL_SEARCH,
                                    init_delays_mode="correlation",
                                    outer_max_iters=60))
    assert rep.converged


def test_mimo_structured_masks():
    rng = np.random.default_rng(104)
    g = random_pr(rng, 6, ny=2, nu=2)
    search = dataclasses.replace(SMALL_SEARCH, grid_points_per_channel=25,
                                 input_mask=(True, False),
                                 output_mask=(False, False))
    rep = io_dirka(g, IoDirkaConfig(order=2, search=search,
                                    outer_max_iters=40))
    hd = rep.model
    assert hd.input_delays.delays[1] == 0.0
    assert hd.output_delays.delays == (0.0, 0.0)
    assert hd.input_delays.mask == (True, False)
    assert rep.residuals.delay_in[1] == 0.0


def test_config_validation():
    rng = np.random.default_rng(105)
    g = random_pr(rng, 4)
    with pytest.raises(DelayH2Error):
        IoDirkaConfig(order=0)
    with pytest.raises(DelayH2Error):
        IoDirkaConfig(order=2, outer_tol=0.0)
    with pytest.raises(DelayH2Error):
        io_dirka(g, IoDirkaConfig(order=5))
    with pytest.raises(DelayH2Error):
        io_dirka(g, IoDirkaConfig(order=2, stopping_mode="bogus"))
    with pytest.raises(DelayH2Error):
        io_dirka(g, IoDirkaConfig(order=2, accelerate="bogus"))
    with pytest.raises(DelayH2Error):
        io_dirka(g, IoDirkaConfig(order=2, init_delays_mode="bogus"))


def test_report_residuals_match_final_model():
    g, rep = small_report(106)
    fresh = optimality_residuals(g, rep.model)
    assert fresh.max_residual() == pytest.approx(rep.residuals.max_residual(),
                                                 rel=1e-12, abs=1e-15)
