"""Delay-free H2-optimal reduction by the rational-Krylov fixed point.

The full model is kept in pole/residue coordinates, where each projection
"solve" (sigma I - A)^{-1} B b is a rational evaluation over the terms, O(N)
per shift. Conjugate shift pairs contribute one complex column each; the
pair's two columns are replaced by (real, imaginary) parts, which together
with conjugate-closed data makes the projected pencil exactly real. For
high-precision models the column and pencil sums run in mpmath (the entries
cancel catastrophically in float64); the n-by-n reduced pencil is rounded to
float64 only after that cancellation, and every reduced model is plain
float64.

At a fixed point the reduced model bitangentially Hermite-interpolates the
target at its mirrored poles; the exit certificate checks exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .errors import DegenerateDirections, DelayH2Error
from .h2 import h2_norm_pole_residue, optimality_residuals
from .models import (
    DelayedModel,
    PoleResidueModel,
    _mpc,
    canonicalize_terms,
)

DIRECTION_TINY = 1e-14


@dataclass(frozen=True)
class IrkaConfig:
    """Settings for :func:`irka_reduce`.

    ``init`` is one of ``"log-spaced-real"`` (shifts log-spaced over the
    target's pole-magnitude range, unit directions), ``"random-stable"``
    (seeded log-uniform real shifts, random directions), or ``"user"``
    (``shifts0``/``right_dirs0``/``left_dirs0`` supplied, conjugate-closed).
    """

    order: int
    max_iters: int = 200
    shift_tol: float = 1e-8
    init: str = "log-spaced-real"
    seed: int = 0
    shifts0: tuple | None = None
    right_dirs0: tuple | None = None
    left_dirs0: tuple | None = None
    retry_random_on_stall: bool = False

    def __post_init__(self):
        if self.order < 1:
            raise DelayH2Error("reduced order must be at least 1")
        if self.max_iters < 1 or not self.shift_tol > 0.0:
            raise DelayH2Error("iteration settings must be positive")


@dataclass(frozen=True)
class IrkaResult:
    model: PoleResidueModel
    iterations: int
    converged: bool
    final_shift_movement: float
    reflections: int


def _initial_iterate(g: PoleResidueModel, cfg: IrkaConfig):
    n = cfg.order
    amin = float(np.min(np.abs(g.poles)))
    amax = float(np.max(np.abs(g.poles)))
    if cfg.init == "user":
        if cfg.shifts0 is None:
            raise DelayH2Error("init='user' requires shifts0")
        shifts = np.asarray(cfg.shifts0, dtype=complex)
        bdirs = (np.asarray(cfg.right_dirs0, dtype=complex)
                 if cfg.right_dirs0 is not None else np.ones((n, g.nu)) / np.sqrt(g.nu))
        cdirs = (np.asarray(cfg.left_dirs0, dtype=complex)
                 if cfg.left_dirs0 is not None else np.ones((n, g.ny)) / np.sqrt(g.ny))
    elif cfg.init == "random-stable":
        rng = np.random.default_rng(cfg.seed)
        lo, hi = np.log(amin), np.log(max(amax, amin * (1 + 1e-12)))
        shifts = np.exp(rng.uniform(lo, hi, size=n)).astype(complex)
        bdirs = rng.standard_normal((n, g.nu)).astype(complex)
        cdirs = rng.standard_normal((n, g.ny)).astype(complex)
    elif cfg.init == "log-spaced-real":
        shifts = np.geomspace(amin, max(amax, amin * (1 + 1e-12)), n).astype(complex)
        # tiny stagger keeps equal-magnitude shifts distinct
        shifts *= 1.0 + 1e-9 * np.arange(n)
        bdirs = np.ones((n, g.nu), dtype=complex) / np.sqrt(g.nu)
        cdirs = np.ones((n, g.ny), dtype=complex) / np.sqrt(g.ny)
    else:
        raise DelayH2Error(f"unknown init mode {cfg.init!r}")
    order = np.lexsort((-np.sign(shifts.imag), np.abs(shifts.imag), shifts.real))
    return shifts[order], bdirs[order], cdirs[order]


def _pair_structure(shifts: np.ndarray) -> list[tuple[int, int | None]]:
    """Group canonical shifts into (index, conjugate partner index or None)."""
    groups = []
    k = 0
    n = shifts.size
    while k < n:
        if abs(shifts[k].imag) > 1e-14 * max(1.0, abs(shifts[k])) and k + 1 < n \
                and abs(shifts[k + 1] - np.conj(shifts[k])) \
                <= 1e-8 * max(1.0, abs(shifts[k])):
            groups.append((k, k + 1))
            k += 2
        else:
            groups.append((k, None))
            k += 1
    return groups


def _project_fp(g: PoleResidueModel, shifts, bdirs, cdirs, groups):
    mu = g.poles
    denom = shifts[None, :] - mu[:, None]              # (N, n)
    V = (g.right @ bdirs.T) / denom
    W = (g.left @ cdirs.T) / denom
    # A conjugate shift pair spans {v, v'}; replace with the half-sum and
    # half-difference-over-i. With conjugate-closed data v' equals v
    # conjugated up to the term-pairing permutation, so all pencil sums
    # over the terms come out real.
    for k, kc in groups:
        if kc is not None:
            vk, vkc = V[:, k].copy(), V[:, kc].copy()
            V[:, k], V[:, kc] = 0.5 * (vk + vkc), -0.5j * (vk - vkc)
            wk, wkc = W[:, k].copy(), W[:, kc].copy()
            W[:, k], W[:, kc] = 0.5 * (wk + wkc), -0.5j * (wk - wkc)
    Er = W.T @ V
    Ar = W.T @ (mu[:, None] * V)
    Br = W.T @ g.right
    Cr = g.left.T @ V
    return Er, Ar, Br, Cr


def _project_hp(g: PoleResidueModel, shifts, bdirs, cdirs, groups):
    hp = g.hp
    N, n = g.order, shifts.size
    ny, nu = g.ny, g.nu
    with mp.workdps(hp.dps):
        msh = [_mpc(s) for s in shifts]
        mb = [[_mpc(v) for v in row] for row in bdirs]
        mc = [[_mpc(v) for v in row] for row in cdirs]
        V = [[mp.mpc(0)] * n for _ in range(N)]
        W = [[mp.mpc(0)] * n for _ in range(N)]
        for j in range(N):
            muj = hp.poles[j]
            rj, lj = hp.right[j], hp.left[j]
            for k in range(n):
                d = 1 / (msh[k] - muj)
                V[j][k] = sum(rj[b] * mb[k][b] for b in range(nu)) * d
                W[j][k] = sum(lj[a] * mc[k][a] for a in range(ny)) * d
        # same pair realification as the float path, in mp arithmetic
        half = mp.mpf("0.5")
        ihalf = mp.mpc(0, -1) * half
        for k, kc in groups:
            if kc is None:
                continue
            for j in range(N):
                v, vc = V[j][k], V[j][kc]
                V[j][k] = (v + vc) * half
                V[j][kc] = (v - vc) * ihalf
                w, wc = W[j][k], W[j][kc]
                W[j][k] = (w + wc) * half
                W[j][kc] = (w - wc) * ihalf
        Er = np.empty((n, n), dtype=complex)
        Ar = np.empty((n, n), dtype=complex)
        for a in range(n):
            for b in range(n):
                se = mp.mpc(0)
                sa = mp.mpc(0)
                for j in range(N):
                    w = W[j][a]
                    se += w * V[j][b]
                    sa += w * hp.poles[j] * V[j][b]
                Er[a, b] = complex(se)
                Ar[a, b] = complex(sa)
        Br = np.empty((n, nu), dtype=complex)
        for a in range(n):
            for b in range(nu):
                Br[a, b] = complex(sum(W[j][a] * hp.right[j][b] for j in range(N)))
        Cr = np.empty((ny, n), dtype=complex)
        for a in range(ny):
            for b in range(n):
                Cr[a, b] = complex(sum(hp.left[j][a] * V[j][b] for j in range(N)))
    return Er, Ar, Br, Cr


def _realify_pencil(*mats: np.ndarray) -> list[np.ndarray]:
    out = []
    for M in mats:
        scale = max(1.0, float(np.max(np.abs(M))))
        if np.max(np.abs(M.imag)) > 1e-6 * scale:
            raise DelayH2Error("projected pencil failed to realify; "
                               "input data is not conjugate-closed")
        out.append(np.ascontiguousarray(M.real))
    return out


def irka_reduce(g: PoleResidueModel, cfg: IrkaConfig) -> IrkaResult:
    """Run the interpolatory fixed-point iteration on ``g``.

    On convergence the returned model satisfies the bitangential Hermite
    conditions at its mirrored poles against ``g`` (checked and folded into
    ``converged``). Unstable intermediate poles are reflected into the left
    half-plane and counted. ``n == order(g)`` recovers the target exactly.
    """
    n = int(cfg.order)
    if not 1 <= n <= g.order:
        raise DelayH2Error(f"reduced order {n} outside [1, {g.order}]")
    shifts, bdirs, cdirs = _initial_iterate(g, cfg)
    retried = False
    movement = np.inf
    moved_ok = False
    reflections = 0
    model = None
    iterations = 0

    while True:
        for _ in range(cfg.max_iters):
            iterations += 1
            groups = _pair_structure(shifts)
            if g.hp is not None:
                Er, Ar, Br, Cr = _project_hp(g, shifts, bdirs, cdirs, groups)
            else:
                Er, Ar, Br, Cr = _project_fp(g, shifts, bdirs, cdirs, groups)
            Er, Ar, Br, Cr = _realify_pencil(Er, Ar, Br, Cr)
            try:
                lam, X = np.linalg.eig(np.linalg.solve(Er, Ar))
            except np.linalg.LinAlgError as exc:
                raise DegenerateDirections(f"projected pencil is singular: {exc}")
            CX = Cr @ X
            try:
                BX = np.linalg.solve(Er @ X, Br)
            except np.linalg.LinAlgError as exc:
                raise DegenerateDirections(f"eigenvector matrix is singular: {exc}")
            unstable = lam.real >= 0
            if np.any(unstable):
                reflections += int(np.sum(unstable))
                lam = np.where(unstable,
                               np.where(lam.real > 0, lam - 2 * lam.real,
                                        lam - 1e-8 * np.maximum(1.0, np.abs(lam))),
                               lam)
            poles, lv, rv = canonicalize_terms(lam, CX.T, BX)
            model = PoleResidueModel(poles, lv, rv)
            new_shifts = -model.poles
            bdirs_new = model.right.copy()
            cdirs_new = model.left.copy()
            dir_scale = max(np.max(np.abs(bdirs_new)), np.max(np.abs(cdirs_new)))
            if (np.min(np.linalg.norm(bdirs_new, axis=1)) < DIRECTION_TINY * dir_scale
                    or np.min(np.linalg.norm(cdirs_new, axis=1)) < DIRECTION_TINY * dir_scale):
                raise DegenerateDirections("tangential direction collapsed to zero")
            denom = max(float(np.max(np.abs(shifts))), 1e-300)
            movement = float(np.max(np.abs(new_shifts - shifts))) / denom
            shifts, bdirs, cdirs = new_shifts, bdirs_new, cdirs_new
            if movement < cfg.shift_tol:
                moved_ok = True
                break
        if moved_ok or not cfg.retry_random_on_stall or retried:
            break
        # optional single re-init with seeded random shifts
        retried = True
        shifts, bdirs, cdirs = _initial_iterate(
            g, IrkaConfig(order=n, init="random-stable", seed=cfg.seed + 1))

    cert_ok = False
    if moved_ok:
        scale = max(h2_norm_pole_residue(g), 1e-30)
        resid = hermite_residuals(g, model)
        cert_ok = bool(np.max(resid) <= 1e-6 * max(scale, 1.0))
    return IrkaResult(model=model, iterations=iterations,
                      converged=bool(moved_ok and cert_ok),
                      final_shift_movement=movement, reflections=reflections)


def hermite_residuals(g: PoleResidueModel,
                      result: IrkaResult | PoleResidueModel) -> np.ndarray:
    """Interpolation-condition defects of a reduced model against ``g``.

    Returns an (n, 3) array of (right, left, Hermite) residual magnitudes
    per reduced pole; the convergence certificate of :func:`irka_reduce`.
    """
    model = result.model if isinstance(result, IrkaResult) else result
    res = optimality_residuals(g, DelayedModel.undelayed(model))
    return np.column_stack([res.interp_right, res.interp_left, res.interp_hermite])
