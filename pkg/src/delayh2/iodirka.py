"""Alternating reduction loop: rational core by IRKA, then delay search.

Each outer iteration rebuilds the delay-advanced surrogate from the current
delays, reduces it with the interpolatory fixed point (warm-started from the
previous reduced model), then re-optimizes the delays against the new core.
Stopping is configurable: combined pole+delay movement (default), maximum
first-order-condition residual, or relative gap change. The trace stores a
full snapshot (delays, reduced terms, gap) per iteration so every reported
number can be recomputed from it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .delayopt import DelaySearchConfig, optimize_delays
from .errors import DelayH2Error
from .h2 import (
    GapValue,
    OptimalityResiduals,
    build_gtilde,
    compute_gap,
    h2_norm_sq,
    optimality_residuals,
)
from .irka import IrkaConfig, IrkaResult, irka_reduce
from .models import DelayBlock, DelayedModel, PoleResidueModel, impulse_response

STOPPING_MODES = ("pole-variation", "optimality-residual", "h2-error")


@dataclass(frozen=True)
class IoDirkaConfig:
    """Settings for :func:`io_dirka`.

    ``stopping_mode``: "pole-variation" stops when both the relative pole-set
    movement and the delay movement fall below ``outer_tol``;
    "optimality-residual" stops when every first-order residual is below it;
    "h2-error" stops on the relative gap change. ``init_delays_mode`` is
    "zero" (default) or "correlation" (impulse cross-correlation against a
    delay-free reduced model, discrete argmax on the search grid).
    ``final_irka_pass`` runs one more core reduction after the last delay
    update and reports the pre-pass residuals alongside. ``accelerate``
    ("aitken" or "none") controls the outer fixed-point accelerator: every
    third iterate the delay vector is extrapolated coordinate-wise with
    Aitken's delta-squared rule before the next surrogate is built, which
    collapses the slow geometric contraction of plain alternation; the
    following delay search still re-optimizes globally, so a bad jump is
    recovered on the next iterate.
    """

    order: int
    init_input_delays: tuple | None = None
    init_output_delays: tuple | None = None
    init_delays_mode: str = "zero"
    outer_max_iters: int = 50
    outer_tol: float = 1e-6
    stopping_mode: str = "pole-variation"
    irka: IrkaConfig | None = None
    search: DelaySearchConfig | None = None
    final_irka_pass: bool = True
    accelerate: str = "aitken"

    def __post_init__(self):
        if self.order < 1:
            raise DelayH2Error("reduced order must be at least 1")
        if self.outer_max_iters < 1 or not self.outer_tol > 0.0:
            raise DelayH2Error("outer iteration settings must be positive")


@dataclass(frozen=True)
class TraceEntry:
    """One outer iteration: delays, reduced terms, and the gap they give."""

    outer: int
    input_delays: tuple
    output_delays: tuple
    poles: tuple
    left: tuple
    right: tuple
    gap: GapValue
    irka_iterations: int
    irka_converged: bool


@dataclass(frozen=True)
class ReductionReport:
    model: DelayedModel
    gap: GapValue
    residuals: OptimalityResiduals
    outer_iterations: int
    trace: tuple
    converged: bool
    norm_g_sq: float
    residuals_before_final_pass: OptimalityResiduals | None
    total_reflections: int


def _snapshot_terms(m: PoleResidueModel):
    poles = tuple(complex(p) for p in m.poles)
    left = tuple(tuple(complex(v) for v in row) for row in m.left)
    right = tuple(tuple(complex(v) for v in row) for row in m.right)
    return poles, left, right


def model_from_snapshot(entry: TraceEntry) -> DelayedModel:
    """Rebuild the delayed model recorded in a trace entry."""
    core = PoleResidueModel(np.array(entry.poles),
                            np.array(entry.left), np.array(entry.right))
    return DelayedModel(core,
                        DelayBlock(entry.input_delays),
                        DelayBlock(entry.output_delays))


def _correlation_init(g: PoleResidueModel, irka_cfg: IrkaConfig,
                      search: DelaySearchConfig,
                      in_mask: np.ndarray, out_mask: np.ndarray,
                      tau_max: float) -> tuple[DelayBlock, DelayBlock]:
    """Discrete impulse cross-correlation heuristic for initial delays.

    Correlates the full model's impulse response against a delay-free
    reduced model's, channel by channel (inputs first, then outputs on top
    of the chosen input shifts), and takes the grid argmax.
    """
    h0 = irka_reduce(g, irka_cfg).model
    pts = 512
    t_tail = 8.0 / float(np.min(np.abs(np.real(h0.poles))))
    t = np.linspace(0.0, tau_max + t_tail, pts)
    dt = t[1] - t[0]
    k_max = int(np.floor(tau_max / dt))
    gi = impulse_response(g, t)
    hi = impulse_response(h0, t)
    tau = np.zeros(g.nu)
    gam = np.zeros(g.ny)
    for l in np.flatnonzero(in_mask):
        scores = [float(np.sum(gi[:, l, k:] * hi[:, l, : pts - k])) * dt
                  for k in range(k_max + 1)]
        tau[l] = dt * int(np.argmax(scores))
    for m in np.flatnonzero(out_mask):
        shifts = np.rint(tau / dt).astype(int)
        scores = []
        for k in range(k_max + 1):
            acc = 0.0
            for l in range(g.nu):
                kk = k + shifts[l]
                if kk < pts:
                    acc += float(np.sum(gi[m, l, kk:] * hi[m, l, : pts - kk]))
            scores.append(acc * dt)
        gam[m] = dt * int(np.argmax(scores))
    return (DelayBlock(tuple(tau), tuple(in_mask)),
            DelayBlock(tuple(gam), tuple(out_mask)))


def io_dirka(g: PoleResidueModel, cfg: IoDirkaConfig) -> ReductionReport:
    """Reduce ``g`` to a delayed model of the configured order.

    Alternates surrogate reduction and delay search until the configured
    stopping rule fires; on hitting ``outer_max_iters`` the lowest-gap
    iterate is returned with ``converged=False``.
    """
    n = int(cfg.order)
    if not 1 <= n <= g.order:
        raise DelayH2Error(f"reduced order {n} outside [1, {g.order}]")
    if cfg.stopping_mode not in STOPPING_MODES:
        raise DelayH2Error(f"unknown stopping mode {cfg.stopping_mode!r}")

    search = cfg.search if cfg.search is not None else DelaySearchConfig()
    in_mask = np.ones(g.nu, dtype=bool) if search.input_mask is None \
        else np.asarray(search.input_mask, dtype=bool)
    out_mask = np.ones(g.ny, dtype=bool) if search.output_mask is None \
        else np.asarray(search.output_mask, dtype=bool)
    search = replace(search, input_mask=tuple(in_mask), output_mask=tuple(out_mask))
    irka_cfg = cfg.irka if cfg.irka is not None else IrkaConfig(order=n)
    if irka_cfg.order != n:
        irka_cfg = replace(irka_cfg, order=n)

    tau_max0 = search.tau_max if search.tau_max is not None \
        else 5.0 / float(np.min(np.abs(np.real(g.poles))))

    if cfg.init_input_delays is not None or cfg.init_output_delays is not None:
        din = DelayBlock(cfg.init_input_delays or (0.0,) * g.nu, tuple(in_mask))
        dout = DelayBlock(cfg.init_output_delays or (0.0,) * g.ny, tuple(out_mask))
    elif cfg.init_delays_mode == "correlation" and (in_mask.any() or out_mask.any()):
        din, dout = _correlation_init(g, irka_cfg, search, in_mask, out_mask, tau_max0)
    elif cfg.init_delays_mode in ("zero", "correlation"):
        din = DelayBlock.zeros(g.nu, tuple(in_mask))
        dout = DelayBlock.zeros(g.ny, tuple(out_mask))
    else:
        raise DelayH2Error(f"unknown init_delays_mode {cfg.init_delays_mode!r}")

    if cfg.accelerate not in ("aitken", "none"):
        raise DelayH2Error(f"unknown accelerate mode {cfg.accelerate!r}")

    norm_g_sq = h2_norm_sq(g)
    trace = []
    converged = False
    reflections = 0
    prev_model: PoleResidueModel | None = None
    prev_delays = np.concatenate([din.as_array(), dout.as_array()])
    prev_gap: float | None = None
    plain_hist: list[np.ndarray] = []

    for outer in range(1, cfg.outer_max_iters + 1):
        gt = build_gtilde(g, din, dout)
        step_cfg = irka_cfg if prev_model is None else replace(
            irka_cfg, init="user",
            shifts0=tuple(-prev_model.poles),
            right_dirs0=tuple(map(tuple, prev_model.right)),
            left_dirs0=tuple(map(tuple, prev_model.left)),
        )
        try:
            res: IrkaResult = irka_reduce(gt, step_cfg)
        except DelayH2Error as exc:
            raise type(exc)(f"outer iteration {outer}: {exc}") from exc
        reflections += res.reflections
        h = res.model
        if in_mask.any() or out_mask.any():
            try:
                din, dout = optimize_delays(
                    g, h, replace(search, extra_starts=((din.delays, dout.delays),)))
            except DelayH2Error as exc:
                raise type(exc)(f"outer iteration {outer}: {exc}") from exc
            # remember the box the search grew into, so later iterations
            # start from it instead of re-extending every time
            mx = max(float(np.max(din.as_array(), initial=0.0)),
                     float(np.max(dout.as_array(), initial=0.0)))
            box = search.tau_max if search.tau_max is not None else tau_max0
            grew = False
            while mx > 0.9 * box:
                box *= 2.0
                grew = True
            if grew:
                search = replace(search, tau_max=box)
        hd = DelayedModel(h, din, dout)
        gap = compute_gap(g, hd, norm_g_sq)
        poles, left, right = _snapshot_terms(h)
        trace.append(TraceEntry(outer=outer, input_delays=din.delays,
                                output_delays=dout.delays, poles=poles,
                                left=left, right=right, gap=gap,
                                irka_iterations=res.iterations,
                                irka_converged=res.converged))

        delays_now = np.concatenate([din.as_array(), dout.as_array()])
        if cfg.stopping_mode == "pole-variation":
            if prev_model is not None:
                pmove = float(np.max(np.abs(h.poles - prev_model.poles))) \
                    / max(float(np.max(np.abs(prev_model.poles))), 1e-300)
                dmove = float(np.max(np.abs(delays_now - prev_delays), initial=0.0)) \
                    / max(float(np.max(np.abs(prev_delays), initial=0.0)), 1.0)
                converged = pmove < cfg.outer_tol and dmove < cfg.outer_tol
        elif cfg.stopping_mode == "optimality-residual":
            converged = optimality_residuals(g, hd).max_residual() < cfg.outer_tol
        else:  # h2-error
            if prev_gap is not None:
                converged = abs(gap.j - prev_gap) / max(gap.j, 1e-30) < cfg.outer_tol
        prev_model, prev_delays, prev_gap = h, delays_now, gap.j
        if converged:
            break

        # Aitken delta-squared jump on the delay vector every third plain
        # iterate; the history restarts after each jump so the rule always
        # sees consecutive images of the plain outer map
        plain_hist.append(delays_now)
        if cfg.accelerate == "aitken" and len(plain_hist) >= 3:
            d0, d1, d2 = plain_hist[-3], plain_hist[-2], plain_hist[-1]
            den = (d2 - d1) - (d1 - d0)
            ext = d2.copy()
            use = np.abs(den) > 1e-13 * np.maximum(1.0, np.abs(d2))
            ext[use] = d2[use] - (d2[use] - d1[use]) ** 2 / den[use]
            box = search.tau_max if search.tau_max is not None else tau_max0
            ext = np.clip(ext, 0.0, 2.0 * box)
            ext[~np.concatenate([in_mask, out_mask])] = 0.0
            if np.max(np.abs(ext - d2), initial=0.0) > 0:
                din = DelayBlock(tuple(ext[: g.nu]), tuple(in_mask))
                dout = DelayBlock(tuple(ext[g.nu:]), tuple(out_mask))
            plain_hist.clear()

    if converged:
        final_entry = trace[-1]
    else:
        final_entry = min(trace, key=lambda e: e.gap.j)
    hd = model_from_snapshot(final_entry)
    # snapshot DelayBlocks carry no masks; reattach them for the final model
    hd = DelayedModel(hd.core, DelayBlock(final_entry.input_delays, tuple(in_mask)),
                      DelayBlock(final_entry.output_delays, tuple(out_mask)))

    residuals_before = None
    if cfg.final_irka_pass:
        residuals_before = optimality_residuals(g, hd)
        gt = build_gtilde(g, hd.input_delays, hd.output_delays)
        res = irka_reduce(gt, replace(
            irka_cfg, init="user",
            shifts0=tuple(-hd.core.poles),
            right_dirs0=tuple(map(tuple, hd.core.right)),
            left_dirs0=tuple(map(tuple, hd.core.left))))
        reflections += res.reflections
        hd = DelayedModel(res.model, hd.input_delays, hd.output_delays)

    gap = compute_gap(g, hd, norm_g_sq)
    residuals = optimality_residuals(g, hd)
    return ReductionReport(model=hd, gap=gap, residuals=residuals,
                           outer_iterations=len(trace), trace=tuple(trace),
                           converged=converged, norm_g_sq=float(norm_g_sq),
                           residuals_before_final_pass=residuals_before,
                           total_reflections=reflections)


def certify(g: PoleResidueModel, report: ReductionReport) -> OptimalityResiduals:
    """Recompute all first-order residuals of the report's final model.

    Independent of any cached value; raises if the recomputation disagrees
    with the report beyond 1e-12 (it is the same pure function of the same
    data, so any drift indicates corruption).
    """
    fresh = optimality_residuals(g, report.model)
    for name in ("interp_right", "interp_left", "interp_hermite",
                 "delay_in", "delay_out"):
        a = np.asarray(getattr(fresh, name))
        b = np.asarray(getattr(report.residuals, name))
        if a.shape != b.shape or (a.size and np.max(np.abs(a - b)) > 1e-12):
            raise DelayH2Error(f"certification mismatch in {name}")
    return fresh
