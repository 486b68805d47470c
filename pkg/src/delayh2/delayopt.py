"""Delay optimization: maximize the cross inner product over box delays.

The objective sum_j k_j e^{mu_j (gamma_m + tau_l)} oscillates through the
complex poles mu_j, so a single local ascent is not trustworthy: the search
runs a coarse grid over the box [0, tau_max]^k (joint for up to three active
channels, cyclic coordinate scans above), then refines the best few cells
with projected gradient ascent plus a Newton polish using the analytic
delay Hessian. The box is grown (doubling, capped) while the winner presses
against the right boundary with positive outward derivative, so a too-small
default horizon cannot truncate the optimum. Ties are broken toward the
lexicographically smallest delay vector; everything is deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from mpmath import mp

from .errors import DelayH2Error, NonFiniteObjective
from .h2 import _cross_eval, _hp_terms, _payload_dps
from .models import DelayBlock, PoleResidueModel

_FP_CHUNK = 4096


@dataclass(frozen=True)
class DelaySearchConfig:
    """Settings for :func:`optimize_delays`.

    ``tau_max=None`` defaults to five times the slowest time constant of the
    full model (5 / min|Re mu|); with ``extend_box`` the box doubles (up to
    ``extend_cap`` times the initial size) while the optimum sits on the
    right boundary with positive gradient. ``input_mask``/``output_mask``
    pin masked-off channels to delay 0. ``extra_starts`` adds refinement
    starts, e.g. the previous outer iteration's delays. ``threads=None``
    reads DELAY_H2_THREADS (0 or unset = auto) for the float grid path.
    """

    grid_points_per_channel: int = 400
    tau_max: float | None = None
    refine_tol: float = 1e-10
    max_refine_iters: int = 100
    input_mask: tuple | None = None
    output_mask: tuple | None = None
    extend_box: bool = True
    extend_cap: float = 64.0
    joint_grid_budget: int = 400_000
    top_starts: int = 5
    extra_starts: tuple = ()
    landscape_csv: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.grid_points_per_channel < 2:
            raise DelayH2Error("grid_points_per_channel must be at least 2")
        if self.tau_max is not None and not self.tau_max > 0.0:
            raise DelayH2Error("tau_max must be positive")
        if not self.refine_tol > 0.0 or self.max_refine_iters < 1:
            raise DelayH2Error("refinement settings must be positive")
        if self.top_starts < 1:
            raise DelayH2Error("top_starts must be at least 1")


def cross_objective(g: PoleResidueModel, h: PoleResidueModel,
                    delays_in, delays_out) -> float:
    """Cross inner product of the delayed candidate against g (real value)."""
    tau = delays_in.as_array() if isinstance(delays_in, DelayBlock) \
        else np.asarray(delays_in, dtype=float)
    gam = delays_out.as_array() if isinstance(delays_out, DelayBlock) \
        else np.asarray(delays_out, dtype=float)
    f, _, _, _ = _cross_eval(g, h, tau, gam, order=0)
    val = float(np.real(f))
    if not np.isfinite(val):
        raise NonFiniteObjective(f"cross objective is {val}")
    return val


def _thread_count(cfg: DelaySearchConfig) -> int:
    raw = cfg.threads
    if raw is None:
        raw = int(os.environ.get("DELAY_H2_THREADS", "0") or 0)
    if raw <= 0:
        raw = min(4, os.cpu_count() or 1)
    return max(1, raw)


class _Objective:
    """Objective over the active delay coordinates, with derivatives.

    Active coordinates are the unmasked channels, inputs first; masked
    channels stay pinned at 0. Grids are ranked with a fast float-precision
    screen (exact for float models); the exact kernel is used for every
    value that is kept: confirmed grid leaders, refinement iterates, and
    the returned optimum.
    """

    def __init__(self, g: PoleResidueModel, h: PoleResidueModel,
                 act_in: np.ndarray, act_out: np.ndarray, threads: int):
        self.g, self.h = g, h
        self.act_in, self.act_out = act_in, act_out
        self.threads = threads
        self.hp = g.hp is not None or h.hp is not None
        dmat = 1.0 / (-g.poles[:, None] - h.poles[None, :])
        hval = np.einsum("km,kl,jk->jml", h.left, h.right, dmat)
        self.ktensor = np.einsum("jm,jml,jl->jml", g.left, hval, g.right)
        if self.hp:
            self.dps = _payload_dps(g, h)
            ny, nu = g.ny, g.nu
            with mp.workdps(self.dps):
                gp, gl, gr = _hp_terms(g)
                hpoles, hl, hr = _hp_terms(h)
                self.mp_mu = gp
                ktensor = []
                for j, muj in enumerate(gp):
                    hv = [[mp.mpc(0)] * nu for _ in range(ny)]
                    for k, lamk in enumerate(hpoles):
                        w = 1 / (-muj - lamk)
                        for m in range(ny):
                            lw = hl[k][m] * w
                            for l in range(nu):
                                hv[m][l] += lw * hr[k][l]
                    ktensor.append([[gl[j][m] * hv[m][l] * gr[j][l]
                                     for l in range(nu)] for m in range(ny)])
                self.mp_k = ktensor

    def _eval_hp(self, x: np.ndarray, order: int):
        """Exact-precision objective (and derivatives) from the cached tensor."""
        tau, gam = self.full_vectors(x)
        ny, nu = self.g.ny, self.g.nu
        with mp.workdps(self.dps):
            mtau = [mp.mpf(float(v)) for v in tau]
            mgam = [mp.mpf(float(v)) for v in gam]
            f = mp.mpc(0)
            g_in = [mp.mpc(0)] * nu
            g_out = [mp.mpc(0)] * ny
            hess = [[mp.mpc(0) for _ in range(nu + ny)]
                    for _ in range(nu + ny)] if order >= 2 else None
            one = mp.mpc(1)
            for j, muj in enumerate(self.mp_mu):
                kj = self.mp_k[j]
                eo = [mp.exp(muj * v) if v else one for v in mgam]
                ei = [mp.exp(muj * v) if v else one for v in mtau]
                mu2 = muj * muj
                for m in range(ny):
                    row = kj[m]
                    eom = eo[m]
                    for l in range(nu):
                        c = row[l] * eom * ei[l]
                        f += c
                        if order >= 1:
                            g_in[l] += muj * c
                            g_out[m] += muj * c
                        if order >= 2:
                            c2 = mu2 * c
                            hess[l][l] += c2
                            hess[nu + m][nu + m] += c2
                            hess[l][nu + m] += c2
                            hess[nu + m][l] += c2
            fc = complex(f)
            gi = np.array([complex(v) for v in g_in])
            go = np.array([complex(v) for v in g_out])
            hs = (np.array([[complex(v) for v in row] for row in hess])
                  if order >= 2 else None)
        return fc, gi, go, hs

    def full_vectors(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tau = np.zeros(self.g.nu)
        gam = np.zeros(self.g.ny)
        tau[self.act_in] = x[: self.act_in.size]
        gam[self.act_out] = x[self.act_in.size:]
        return tau, gam

    def value(self, x: np.ndarray) -> float:
        if self.hp:
            return float(np.real(self._eval_hp(x, 0)[0]))
        tau, gam = self.full_vectors(x)
        f, _, _, _ = _cross_eval(self.g, self.h, tau, gam, order=0)
        return float(np.real(f))

    def value_grad_hess(self, x: np.ndarray):
        if self.hp:
            f, g_in, g_out, hess = self._eval_hp(x, 2)
        else:
            tau, gam = self.full_vectors(x)
            f, g_in, g_out, hess = _cross_eval(self.g, self.h, tau, gam, order=2)
        idx = np.concatenate([self.act_in, self.g.nu + self.act_out])
        grad = np.concatenate([np.real(g_in), np.real(g_out)])[idx]
        return float(np.real(f)), grad, np.real(hess)[np.ix_(idx, idx)]

    def batch(self, points: np.ndarray) -> np.ndarray:
        """Exact objective at many active-coordinate points, shape (P,)."""
        if self.hp:
            return np.array([self.value(p) for p in points])
        return self.prescreen(points)

    def prescreen(self, points: np.ndarray) -> np.ndarray:
        """Float-precision objective over many points (ranking quality)."""
        mu = self.g.poles

        def _chunk(block: np.ndarray) -> np.ndarray:
            tau = np.zeros((block.shape[0], self.g.nu))
            gam = np.zeros((block.shape[0], self.g.ny))
            tau[:, self.act_in] = block[:, : self.act_in.size]
            gam[:, self.act_out] = block[:, self.act_in.size:]
            e_in = np.exp(np.einsum("j,pl->pjl", mu, tau))
            e_out = np.exp(np.einsum("j,pm->pjm", mu, gam))
            return np.real(np.einsum("jml,pjm,pjl->p", self.ktensor, e_out, e_in))

        blocks = [points[lo:lo + _FP_CHUNK] for lo in range(0, len(points), _FP_CHUNK)]
        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(_chunk, blocks))
        else:
            parts = [_chunk(b) for b in blocks]
        return np.concatenate(parts) if parts else np.zeros(0)


def _refine(obj: _Objective, x0: np.ndarray, tau_max: float,
            cfg: DelaySearchConfig, step0: float) -> tuple[np.ndarray, float]:
    """Projected ascent with Newton polish from one start; returns (x, f)."""
    x = np.clip(np.asarray(x0, dtype=float), 0.0, tau_max)
    f, grad, hess = obj.value_grad_hess(x)
    step = step0
    for _ in range(cfg.max_refine_iters):
        pg = grad.copy()
        pg[(x <= 0.0) & (grad < 0)] = 0.0
        pg[(x >= tau_max) & (grad > 0)] = 0.0
        if np.max(np.abs(pg), initial=0.0) < cfg.refine_tol:
            break
        moved = False
        # Newton step when the curvature certifies a local max
        try:
            eigs = np.linalg.eigvalsh(0.5 * (hess + hess.T))
            if np.max(eigs) < 0:
                xn = np.clip(x + np.linalg.solve(-hess, grad), 0.0, tau_max)
                fn, gn, hn = obj.value_grad_hess(xn)
                if fn >= f:
                    x, f, grad, hess = xn, fn, gn, hn
                    moved = True
        except np.linalg.LinAlgError:
            pass
        if not moved:
            # scale so the first trial moves ~step along the steepest axis,
            # growing on clean accepts so distant starts traverse quickly
            t = step / max(float(np.max(np.abs(pg))), 1e-300)
            gnorm2 = float(pg @ pg)
            halvings = 0
            for _ in range(60):
                xn = np.clip(x + t * pg, 0.0, tau_max)
                fn = obj.value(xn)
                if fn > f + 1e-4 * t * gnorm2:
                    fn, gn, hn = obj.value_grad_hess(xn)
                    x, f, grad, hess = xn, fn, gn, hn
                    moved = True
                    break
                t *= 0.5
                halvings += 1
            if not moved:
                break
            step = min(step * 2.0, tau_max) if halvings == 0 \
                else max(step * 0.5 ** halvings, step0)
    return x, f


def _grid_axes(k_act: int, tau_max: float, cfg: DelaySearchConfig) -> np.ndarray:
    per_axis = cfg.grid_points_per_channel
    if k_act > 1:
        per_axis = min(per_axis,
                       max(2, int(cfg.joint_grid_budget ** (1.0 / k_act))))
    return np.linspace(0.0, tau_max, per_axis)


def _scan(obj: _Objective, k_act: int, tau_max: float,
          cfg: DelaySearchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Coarse scan: joint grid for <=3 active channels, cyclic scans above.

    Returns (points, screening values) of every evaluated grid point; the
    values rank cells for refinement and are float-precision.
    """
    axis = _grid_axes(k_act, tau_max, cfg)
    if k_act <= 3:
        mesh = np.meshgrid(*([axis] * k_act), indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        return points, obj.prescreen(points)
    # cyclic coordinate scans from the origin, two sweeps
    x = np.zeros(k_act)
    pts, vals = [], []
    for _ in range(2):
        for i in range(k_act):
            block = np.repeat(x[None, :], axis.size, axis=0)
            block[:, i] = axis
            v = obj.prescreen(block)
            pts.append(block)
            vals.append(v)
            x = block[int(np.argmax(v))].copy()
    return np.concatenate(pts), np.concatenate(vals)


def _write_landscape(path: str, obj: _Objective, points: np.ndarray,
                     values: np.ndarray) -> None:
    nu, ny = obj.g.nu, obj.g.ny
    header = ",".join([f"tau_{i + 1}" for i in range(nu)]
                      + [f"gamma_{i + 1}" for i in range(ny)] + ["objective"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for p, v in zip(points, values):
            tau, gam = obj.full_vectors(p)
            row = np.concatenate([tau, gam, [v]])
            fh.write(",".join("%.12e" % c for c in row) + "\n")


def optimize_delays(g: PoleResidueModel, h: PoleResidueModel,
                    cfg: DelaySearchConfig) -> tuple[DelayBlock, DelayBlock]:
    """Find box-constrained delays maximizing the cross inner product.

    Returns (input delays, output delays). The returned objective value is
    >= every evaluated grid sample, and at an interior optimum the delay
    gradient norm is below ``refine_tol`` (boundary points may carry an
    outward gradient). All-masked problems return zero delays immediately.
    """
    in_mask = np.ones(g.nu, dtype=bool) if cfg.input_mask is None \
        else np.asarray(cfg.input_mask, dtype=bool)
    out_mask = np.ones(g.ny, dtype=bool) if cfg.output_mask is None \
        else np.asarray(cfg.output_mask, dtype=bool)
    act_in = np.flatnonzero(in_mask)
    act_out = np.flatnonzero(out_mask)
    k_act = act_in.size + act_out.size
    if k_act == 0:
        return (DelayBlock.zeros(g.nu, tuple(in_mask)),
                DelayBlock.zeros(g.ny, tuple(out_mask)))

    tau_max0 = cfg.tau_max if cfg.tau_max is not None \
        else 5.0 / float(np.min(np.abs(np.real(g.poles))))
    obj = _Objective(g, h, act_in, act_out, _thread_count(cfg))

    tau_max = float(tau_max0)
    while True:
        points, values = _scan(obj, k_act, tau_max, cfg)
        if not np.all(np.isfinite(values)):
            raise NonFiniteObjective("grid scan produced non-finite objective values")
        if cfg.landscape_csv:
            _write_landscape(cfg.landscape_csv, obj, points, values)
        n_top = min(cfg.top_starts, values.size)
        if obj.hp:
            # screening is float-precision: confirm the leading cells with
            # the exact kernel before ranking and bounding against them
            lead = np.argsort(-values, kind="stable")[:max(n_top, min(25, values.size))]
            exact = np.array([obj.value(points[i]) for i in lead])
            order = np.argsort(-exact, kind="stable")
            grid_best = float(exact[order[0]])
            top = lead[order[:n_top]]
            grid_argbest = int(lead[order[0]])
        else:
            grid_best = float(np.max(values))
            top = np.argsort(-values, kind="stable")[:n_top]
            grid_argbest = int(np.argmax(values))
        starts = [points[i] for i in top]
        starts.append(np.zeros(k_act))
        for tau_extra, gam_extra in cfg.extra_starts:
            full = np.concatenate([np.asarray(tau_extra, dtype=float)[act_in],
                                   np.asarray(gam_extra, dtype=float)[act_out]])
            starts.append(np.clip(full, 0.0, tau_max))

        spacing = tau_max / max(_grid_axes(k_act, tau_max, cfg).size - 1, 1)
        best_x, best_f = None, 0.0
        for x0 in starts:
            x, f = _refine(obj, x0, tau_max, cfg, step0=spacing)
            if best_x is None:
                best_x, best_f = x, f
                continue
            tol = 1e-14 * max(1.0, abs(best_f))
            if f > best_f + tol or (abs(f - best_f) <= tol
                                    and tuple(x) < tuple(best_x)):
                best_x, best_f = x, f

        if best_f < grid_best:
            # refinement can only improve on the best start; keep the grid
            # winner if numerical ties land the other way
            best_x = points[grid_argbest]
            best_f = grid_best

        if not cfg.extend_box or tau_max >= cfg.extend_cap * tau_max0:
            break
        _, grad, _ = obj.value_grad_hess(best_x)
        pressing = (best_x >= tau_max - 2 * spacing) & (grad > 0)
        if not np.any(pressing):
            break
        tau_max *= 2.0

    tau, gam = obj.full_vectors(best_x)
    # snap near-zero coordinates produced by clipping
    tau[np.abs(tau) < 1e-300] = 0.0
    gam[np.abs(gam) < 1e-300] = 0.0
    return (DelayBlock(tuple(tau), tuple(in_mask)),
            DelayBlock(tuple(gam), tuple(out_mask)))
