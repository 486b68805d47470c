"""Model representations and conversions.

Three value types represent everything the package computes with:

* :class:`StateSpaceModel`        -- descriptor realization (E, A, B, C),
* :class:`PoleResidueModel`       -- sum of rank-1 terms c b^T / (s - lambda),
* :class:`DelayedModel`           -- a pole/residue core wrapped by channel-wise
                                     input and output delay blocks.

Pole/residue models optionally carry a high-precision payload (mpmath
terms at a recorded decimal precision). Residues of ill-conditioned
partial-fraction decompositions can exceed 1e15 with massive cancellation
between terms, in which case every sum over the terms must run in extended
precision; the complex128 arrays are then only views for inspection. All
reduced-order models produced by this package are plain float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import mpmath as mp
import numpy as np

from .errors import (
    DimensionMismatch,
    EvalAtPole,
    NonInvertibleE,
    NonRealModel,
    RepeatedPole,
    Unstable,
)

# Absolute tolerance for the imaginary leakage of sums that must be real.
IMAG_TOL = 1e-10
# Relative pole-coincidence tolerance for the semi-simplicity check.
REPEATED_POLE_RTOL = 1e-8
# Relative tolerance used when deciding that a pole is real / pairing conjugates.
PAIR_RTOL = 1e-8
# Condition-number ceiling for the descriptor matrix E.
E_COND_MAX = 1e12
# Relative guard radius around poles for transfer evaluation.
EVAL_POLE_RTOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _mpc(z) -> mp.mpc:
    """Exact binary64 -> mpc conversion (both components)."""
    return mp.mpc(mp.mpf(float(np.real(z))), mp.mpf(float(np.imag(z))))


@dataclass(frozen=True)
class HighPrecisionTerms:
    """mpmath mirror of a pole/residue term list.

    ``poles`` has one mpc per term; ``left``/``right`` are per-term tuples of
    mpc residue-vector entries. ``dps`` records the decimal precision the
    payload was produced at (and the minimum precision sums over it use).
    """

    poles: tuple
    left: tuple
    right: tuple
    dps: int

    def __len__(self) -> int:
        return len(self.poles)


def _sort_permutation(poles: np.ndarray) -> np.ndarray:
    """Canonical term order: by (Re, |Im|), positive imaginary part first.

    Conjugate partners land adjacent with the +Im member leading, and the
    order is reproducible for any input permutation.
    """
    re = np.real(poles)
    im = np.imag(poles)
    return np.lexsort((-np.sign(im), np.abs(im), re))


@dataclass(frozen=True, eq=False)
class PoleResidueModel:
    """Transfer function H(s) = sum_j left_j right_j^T / (s - poles_j).

    Parameters
    ----------
    poles : (n,) complex array
    left : (n, ny) complex array
        Left (output-side) residue vectors, one row per term.
    right : (n, nu) complex array
        Right (input-side) residue vectors, one row per term.
    hp : HighPrecisionTerms, optional
        Extended-precision payload; when present it is the authoritative
        representation and the float arrays are rounded views.

    Terms are stored in canonical order (sorted by (Re, |Im|) with the
    positive-imaginary member of each conjugate pair first). Construction
    validates stability and pole distinctness but not conjugate closure;
    use :func:`realify_check` for that.
    """

    poles: np.ndarray
    left: np.ndarray
    right: np.ndarray
    hp: HighPrecisionTerms | None = None

    def __post_init__(self):
        poles = np.atleast_1d(np.asarray(self.poles, dtype=complex))
        left = np.asarray(self.left, dtype=complex)
        right = np.asarray(self.right, dtype=complex)
        # 1-D residue input means one scalar channel per term
        left = left[:, None] if left.ndim == 1 else np.atleast_2d(left)
        right = right[:, None] if right.ndim == 1 else np.atleast_2d(right)
        n = poles.shape[0]
        if left.shape[0] != n or right.shape[0] != n:
            raise DimensionMismatch(
                f"{n} poles but {left.shape[0]} left / {right.shape[0]} right residue rows"
            )
        if not (np.all(np.isfinite(poles)) and np.all(np.isfinite(left))
                and np.all(np.isfinite(right))):
            raise NonRealModel("non-finite entries in pole/residue data")
        if np.any(np.real(poles) >= 0):
            worst = poles[np.argmax(np.real(poles))]
            raise Unstable(f"pole {worst} has nonnegative real part")
        scale = max(1.0, float(np.max(np.abs(poles))))
        if n > 1:
            dist = np.abs(poles[:, None] - poles[None, :])
            dist[np.diag_indices(n)] = np.inf
            if dist.min() < REPEATED_POLE_RTOL * scale:
                i, j = np.unravel_index(np.argmin(dist), dist.shape)
                raise RepeatedPole(f"poles {poles[i]} and {poles[j]} coincide within tolerance")
        perm = _sort_permutation(poles)
        object.__setattr__(self, "poles", _readonly(poles[perm]))
        object.__setattr__(self, "left", _readonly(left[perm]))
        object.__setattr__(self, "right", _readonly(right[perm]))
        if self.hp is not None:
            hp = self.hp
            if len(hp) != n:
                raise DimensionMismatch("high-precision payload length differs from term count")
            take = lambda seq: tuple(seq[k] for k in perm)
            object.__setattr__(
                self,
                "hp",
                HighPrecisionTerms(take(hp.poles), take(hp.left), take(hp.right), hp.dps),
            )

    @property
    def order(self) -> int:
        return self.poles.shape[0]

    @property
    def ny(self) -> int:
        return self.left.shape[1]

    @property
    def nu(self) -> int:
        return self.right.shape[1]

    @property
    def terms(self) -> list[tuple[complex, np.ndarray, np.ndarray]]:
        return [(self.poles[k], self.left[k], self.right[k]) for k in range(self.order)]


@dataclass(frozen=True)
class StateSpaceModel:
    """Descriptor realization E x' = A x + B u, y = C x (no feedthrough).

    E must be invertible (condition number below 1e12) and all generalized
    eigenvalues of (A, E) strictly stable; both are checked on construction.
    """

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = E.shape[0]
        if E.shape != (n, n) or A.shape != (n, n):
            raise DimensionMismatch("E and A must be square with matching size")
        if B.shape[0] != n or C.shape[1] != n:
            raise DimensionMismatch("B rows and C columns must match the state dimension")
        for name, M in (("E", E), ("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(M)):
                raise NonRealModel(f"non-finite entries in {name}")
        cond = np.linalg.cond(E)
        if not np.isfinite(cond) or cond > E_COND_MAX:
            raise NonInvertibleE(f"cond(E) = {cond:.3e} exceeds {E_COND_MAX:.0e}")
        eigs = np.linalg.eigvals(np.linalg.solve(E, A))
        if np.any(np.real(eigs) >= 0):
            worst = eigs[np.argmax(np.real(eigs))]
            raise Unstable(f"generalized eigenvalue {worst} has nonnegative real part")
        object.__setattr__(self, "E", _readonly(E))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "C", _readonly(C))

    @property
    def order(self) -> int:
        return self.E.shape[0]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class DelayBlock:
    """Per-channel nonnegative delays plus the mask of delayable channels.

    ``delays[i]`` must be 0 wherever ``mask[i]`` is False; the mask encodes
    the structured case where only some channels may carry delay.
    """

    delays: tuple
    mask: tuple

    def __init__(self, delays: Sequence[float], mask: Sequence[bool] | None = None):
        delays = tuple(float(d) for d in np.atleast_1d(np.asarray(delays, dtype=float)))
        if mask is None:
            mask = tuple(True for _ in delays)
        else:
            mask = tuple(bool(b) for b in np.atleast_1d(mask))
        if len(mask) != len(delays):
            raise DimensionMismatch("mask length differs from delay length")
        for d, m in zip(delays, mask):
            if not np.isfinite(d) or d < 0:
                raise NonRealModel(f"delay {d} is not a finite nonnegative number")
            if d != 0.0 and not m:
                raise NonRealModel(f"delay {d} on a masked-off channel")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def zeros(cls, k: int, mask: Sequence[bool] | None = None) -> "DelayBlock":
        return cls((0.0,) * k, mask)

    @classmethod
    def none(cls, k: int) -> "DelayBlock":
        """All-zero delays with every channel masked off (delay-free block)."""
        return cls((0.0,) * k, (False,) * k)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.delays, dtype=float)

    def mask_array(self) -> np.ndarray:
        return np.asarray(self.mask, dtype=bool)

    def __len__(self) -> int:
        return len(self.delays)


@dataclass(frozen=True)
class DelayedModel:
    """Delayed transfer function: diag(e^{-s*gamma}) H(s) diag(e^{-s*tau}).

    ``input_delays`` has one entry per input channel (tau), ``output_delays``
    one per output channel (gamma).
    """

    core: PoleResidueModel
    input_delays: DelayBlock
    output_delays: DelayBlock

    def __post_init__(self):
        if len(self.input_delays) != self.core.nu:
            raise DimensionMismatch(
                f"{len(self.input_delays)} input delays for {self.core.nu} inputs"
            )
        if len(self.output_delays) != self.core.ny:
            raise DimensionMismatch(
                f"{len(self.output_delays)} output delays for {self.core.ny} outputs"
            )

    @classmethod
    def undelayed(cls, core: PoleResidueModel) -> "DelayedModel":
        return cls(core, DelayBlock.none(core.nu), DelayBlock.none(core.ny))


def _as_delayed(m) -> DelayedModel:
    return m if isinstance(m, DelayedModel) else DelayedModel.undelayed(m)


# ---------------------------------------------------------------------------
# canonicalization of raw term data (used by the state-space conversion and
# by the reduced-pencil extraction in irka)


def canonicalize_terms(
    poles: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    *,
    pair_rtol: float = PAIR_RTOL,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Turn noisy eigen-decomposition output into exactly conjugate-closed,
    balanced, deterministically phased term data.

    Real-pole terms get their imaginary parts dropped; conjugate pairs are
    averaged and re-emitted as exact conjugates. Each term is rebalanced to
    ``norm(left) == norm(right)`` and rotated so the largest-magnitude entry
    of ``left`` is real positive (the pair's +Im member sets the phase).
    Raises NonRealModel if terms cannot be paired within tolerance.
    """
    poles = np.asarray(poles, dtype=complex)
    left = np.asarray(left, dtype=complex)
    right = np.asarray(right, dtype=complex)
    left = left[:, None] if left.ndim == 1 else np.atleast_2d(left)
    right = right[:, None] if right.ndim == 1 else np.atleast_2d(right)
    scale = max(1.0, float(np.max(np.abs(poles))))
    tol = pair_rtol * scale

    real_idx = [k for k in range(len(poles)) if abs(poles[k].imag) <= tol]
    pos_idx = [k for k in range(len(poles)) if poles[k].imag > tol]
    neg_idx = [k for k in range(len(poles)) if poles[k].imag < -tol]
    if len(pos_idx) != len(neg_idx):
        raise NonRealModel("conjugate pairing impossible: unequal +Im / -Im pole counts")

    out_p, out_l, out_r = [], [], []

    def _balanced(lam, lv, rv):
        nl = np.linalg.norm(lv)
        nr = np.linalg.norm(rv)
        if nl == 0.0 or nr == 0.0:
            return lam, lv, rv
        alpha = np.sqrt(nr / nl)
        lv = lv * alpha
        rv = rv / alpha
        k = int(np.argmax(np.abs(lv)))
        ph = lv[k] / abs(lv[k])
        return lam, lv / ph, rv * ph

    for k in real_idx:
        lv, rv = left[k], right[k]
        res_scale = max(np.abs(lv).max(), np.abs(rv).max(), 1.0)
        if max(np.abs(lv.imag).max(), np.abs(rv.imag).max()) > 1e-6 * res_scale:
            raise NonRealModel(f"real pole {poles[k]} carries complex residues")
        lam, lv, rv = _balanced(poles[k].real + 0j, lv.real + 0j, rv.real + 0j)
        out_p.append(lam)
        out_l.append(lv.real + 0j)
        out_r.append(rv.real + 0j)

    # pair each +Im pole with the closest conjugate among the -Im poles
    neg_free = list(neg_idx)
    for k in sorted(pos_idx, key=lambda i: (poles[i].real, poles[i].imag)):
        dists = [abs(poles[k] - np.conj(poles[j])) for j in neg_free]
        jbest = int(np.argmin(dists))
        if dists[jbest] > 10 * tol:
            raise NonRealModel(f"no conjugate partner for pole {poles[k]}")
        j = neg_free.pop(jbest)
        lam = 0.5 * (poles[k] + np.conj(poles[j]))
        lv = 0.5 * (left[k] + np.conj(left[j]))
        rv = 0.5 * (right[k] + np.conj(right[j]))
        lam, lv, rv = _balanced(lam, lv, rv)
        out_p.extend([lam, np.conj(lam)])
        out_l.extend([lv, np.conj(lv)])
        out_r.extend([rv, np.conj(rv)])

    return np.array(out_p), np.array(out_l), np.array(out_r)


# ---------------------------------------------------------------------------
# conversion


def pole_residue_from_state_space(m: StateSpaceModel) -> PoleResidueModel:
    """Partial-fraction decomposition of C (sE - A)^{-1} B.

    Diagonalizes E^{-1}A (dense), so the pencil must have distinct
    (semi-simple) eigenvalues; coinciding ones raise RepeatedPole. The
    rank-1 residues are balanced so that ``norm(left) == norm(right)``.
    """
    eigvals, X = np.linalg.eig(np.linalg.solve(m.E, m.A))
    n = m.order
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    if n > 1:
        dist = np.abs(eigvals[:, None] - eigvals[None, :])
        dist[np.diag_indices(n)] = np.inf
        if dist.min() < REPEATED_POLE_RTOL * scale:
            i, j = np.unravel_index(np.argmin(dist), dist.shape)
            raise RepeatedPole(
                f"eigenvalues {eigvals[i]} and {eigvals[j]} coincide within tolerance"
            )
    if np.any(np.real(eigvals) >= 0):
        raise Unstable("pencil (A, E) has an eigenvalue with nonnegative real part")
    # C (sE-A)^{-1} B = (C X) diag(1/(s-lam)) (X^{-1} E^{-1} B)
    CX = m.C @ X
    BX = np.linalg.solve(X, np.linalg.solve(m.E, m.B))
    poles, lv, rv = canonicalize_terms(eigvals, CX.T, BX)
    return PoleResidueModel(poles, lv, rv)


# ---------------------------------------------------------------------------
# evaluation


def _check_not_pole(m: PoleResidueModel, s: complex) -> None:
    scale = max(1.0, float(np.max(np.abs(m.poles))))
    if np.min(np.abs(m.poles - s)) < EVAL_POLE_RTOL * scale:
        raise EvalAtPole(f"evaluation point {s} is within tolerance of a pole")


def eval_transfer(m: PoleResidueModel, s: complex) -> np.ndarray:
    """H(s) = sum_j left_j right_j^T / (s - lambda_j) as an ny-by-nu matrix."""
    _check_not_pole(m, s)
    if m.hp is not None:
        return _hp_matrix_to_complex(_eval_transfer_hp(m, _mpc(s), derivative=False))
    w = 1.0 / (s - m.poles)
    return np.einsum("j,jm,jl->ml", w, m.left, m.right)


def eval_transfer_derivative(m: PoleResidueModel, s: complex) -> np.ndarray:
    """d/ds of the transfer function: -sum_j left_j right_j^T / (s - lambda_j)^2."""
    _check_not_pole(m, s)
    if m.hp is not None:
        return _hp_matrix_to_complex(_eval_transfer_hp(m, _mpc(s), derivative=True))
    w = -1.0 / (s - m.poles) ** 2
    return np.einsum("j,jm,jl->ml", w, m.left, m.right)


def _eval_transfer_hp(m: PoleResidueModel, s: mp.mpc, derivative: bool):
    hp = m.hp
    with mp.workdps(hp.dps):
        ny, nu = m.ny, m.nu
        acc = [[mp.mpc(0) for _ in range(nu)] for _ in range(ny)]
        for lam, lv, rv in zip(hp.poles, hp.left, hp.right):
            d = s - lam
            w = (-1 / (d * d)) if derivative else (1 / d)
            for a in range(ny):
                la = lv[a] * w
                for b in range(nu):
                    acc[a][b] += la * rv[b]
        return acc


def _hp_matrix_to_complex(acc) -> np.ndarray:
    return np.array([[complex(v) for v in row] for row in acc], dtype=complex)


def eval_transfer_grid(m: PoleResidueModel, s: np.ndarray) -> np.ndarray:
    """Vectorized transfer evaluation at many points: (len(s), ny, nu).

    Float path only; high-precision models are evaluated point-wise in mp
    and rounded, which is slow for large grids.
    """
    s = np.asarray(s, dtype=complex).ravel()
    if m.hp is not None:
        return np.array(
            [_hp_matrix_to_complex(_eval_transfer_hp(m, _mpc(p), derivative=False)) for p in s]
        )
    w = 1.0 / (s[:, None] - m.poles[None, :])
    return np.einsum("pj,jm,jl->pml", w, m.left, m.right)


# ---------------------------------------------------------------------------
# impulse response


def realify_check(m: PoleResidueModel, tol: float = IMAG_TOL) -> bool:
    """True iff the model represents a real system: every complex pole has an
    exact-conjugate partner term (pole and both residue vectors) within tol."""
    scale = max(1.0, float(np.max(np.abs(m.poles))))
    res_scale = max(1.0, float(max(np.max(np.abs(m.left)), np.max(np.abs(m.right)))))
    unmatched = list(range(m.order))
    while unmatched:
        k = unmatched.pop(0)
        lam = m.poles[k]
        if abs(lam.imag) <= tol * scale:
            if max(np.max(np.abs(m.left[k].imag)), np.max(np.abs(m.right[k].imag))) > tol * res_scale:
                return False
            continue
        found = None
        for j in unmatched:
            if (
                abs(m.poles[j] - np.conj(lam)) <= tol * scale
                and np.max(np.abs(m.left[j] - np.conj(m.left[k]))) <= tol * res_scale
                and np.max(np.abs(m.right[j] - np.conj(m.right[k]))) <= tol * res_scale
            ):
                found = j
                break
        if found is None:
            return False
        unmatched.remove(found)
    return True


def impulse_response(m: DelayedModel | PoleResidueModel, t_grid: np.ndarray) -> np.ndarray:
    """Impulse response on a time grid: real array of shape (ny, nu, len(t)).

    Entry (a, b) at time t is sum_j left[j,a] right[j,b] e^{lambda_j (t-g-τ)}
    for t >= gamma_a + tau_b and 0 before. The imaginary part must cancel by
    conjugate closure; |Im| >= 1e-10 raises NonRealModel.
    """
    hd = _as_delayed(m)
    core = hd.core
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
        raise NonRealModel("time grid must be nondecreasing and nonnegative")
    if not realify_check(core, tol=1e-8):
        raise NonRealModel("impulse response requires a conjugate-closed model")
    gam = hd.output_delays.as_array()
    tau = hd.input_delays.as_array()
    out = np.zeros((core.ny, core.nu, t.size))
    if core.hp is not None:
        hp = core.hp
        with mp.workdps(hp.dps):
            mt = [mp.mpf(float(x)) for x in t]
            for a in range(core.ny):
                for b in range(core.nu):
                    shift = float(gam[a] + tau[b])
                    mshift = mp.mpf(shift)
                    for it, tv in enumerate(t):
                        if tv < shift:
                            continue
                        acc = mp.mpc(0)
                        for lam, lv, rv in zip(hp.poles, hp.left, hp.right):
                            acc += lv[a] * rv[b] * mp.exp(lam * (mt[it] - mshift))
                        if abs(mp.im(acc)) >= IMAG_TOL:
                            raise NonRealModel(
                                f"imaginary leakage {float(mp.im(acc)):.3e} in impulse response"
                            )
                        out[a, b, it] = float(mp.re(acc))
        return out
    for a in range(core.ny):
        for b in range(core.nu):
            shift = gam[a] + tau[b]
            alive = t >= shift
            dt = t[alive] - shift
            vals = np.einsum("j,jp->p", core.left[:, a] * core.right[:, b],
                             np.exp(np.outer(core.poles, dt)))
            leak = np.max(np.abs(vals.imag)) if vals.size else 0.0
            if leak >= IMAG_TOL:
                raise NonRealModel(f"imaginary leakage {leak:.3e} in impulse response")
            out[a, b, alive] = vals.real
    return out
