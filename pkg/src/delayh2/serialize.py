"""Deterministic JSON and CSV writers plus model (de)serialization.

All JSON is emitted in canonical form: keys sorted, floats as %.17g (exact
binary64 round trip), no timestamps, LF newlines. The same data therefore
always produces byte-identical files. Models whose terms carry an
extended-precision payload add a "precision" field (decimal digits) and
store coefficients as decimal strings at that precision.
"""

from __future__ import annotations

import json
import math

import mpmath
import numpy as np

from .errors import DelayH2Error
from .h2 import GapValue, OptimalityResiduals
from .models import (
    DelayBlock,
    DelayedModel,
    HighPrecisionTerms,
    PoleResidueModel,
    StateSpaceModel,
)

# ---------------------------------------------------------------------------
# canonical JSON text


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise DelayH2Error("non-finite value cannot be serialized")
    return format(float(x), ".17g")


def dumps_canonical(obj) -> str:
    """Serialize a plain python tree to canonical JSON text."""
    out = []
    _emit(obj, out)
    return "".join(out)


def _emit(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise DelayH2Error("JSON object keys must be strings")
            if i:
                out.append(", ")
            out.append(json.dumps(key))
            out.append(": ")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(", ")
            _emit(item, out)
        out.append("]")
    else:
        raise DelayH2Error(f"cannot serialize object of type {type(obj).__name__}")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DelayH2Error(
            f"malformed JSON in {path}: {exc.msg} at line {exc.lineno} "
            f"column {exc.colno}") from exc
    except OSError as exc:
        raise DelayH2Error(f"cannot read {path}: {exc}") from exc


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise DelayH2Error(f"missing field {key!r} in {where}")
    return obj[key]


# ---------------------------------------------------------------------------
# models


def _pair(z: complex) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def _mp_str(v, dps: int) -> str:
    return mpmath.nstr(v, dps, strip_zeros=True)


def model_to_obj(m) -> dict:
    """Plain-tree form of a state-space, pole-residue, or delayed model."""
    if isinstance(m, DelayedModel):
        obj = model_to_obj(m.core)
        obj["input_delays"] = [float(d) for d in m.input_delays.delays]
        obj["output_delays"] = [float(d) for d in m.output_delays.delays]
        obj["input_mask"] = [bool(x) for x in m.input_delays.mask]
        obj["output_mask"] = [bool(x) for x in m.output_delays.mask]
        obj["kind"] = "delayed"
        return obj
    if isinstance(m, StateSpaceModel):
        return {"kind": "state_space",
                "E": m.E.tolist(), "A": m.A.tolist(),
                "B": m.B.tolist(), "C": m.C.tolist()}
    if isinstance(m, PoleResidueModel):
        terms = []
        if m.hp is not None:
            dps = m.hp.dps
            with mpmath.workdps(dps):
                for p, lrow, rrow in zip(m.hp.poles, m.hp.left, m.hp.right):
                    terms.append({
                        "pole": [_mp_str(p.real, dps), _mp_str(p.imag, dps)],
                        "left": [[_mp_str(v.real, dps), _mp_str(v.imag, dps)]
                                 for v in lrow],
                        "right": [[_mp_str(v.real, dps), _mp_str(v.imag, dps)]
                                  for v in rrow],
                    })
            return {"kind": "pole_residue", "ny": m.ny, "nu": m.nu,
                    "precision": dps, "terms": terms}
        for k in range(m.order):
            terms.append({"pole": _pair(m.poles[k]),
                          "left": [_pair(v) for v in m.left[k]],
                          "right": [_pair(v) for v in m.right[k]]})
        return {"kind": "pole_residue", "ny": m.ny, "nu": m.nu, "terms": terms}
    raise DelayH2Error(f"cannot serialize model of type {type(m).__name__}")


def _obj_to_pole_residue(obj: dict, where: str) -> PoleResidueModel:
    terms = _require(obj, "terms", where)
    ny = int(_require(obj, "ny", where))
    nu = int(_require(obj, "nu", where))
    n = len(terms)
    if n == 0:
        raise DelayH2Error(f"empty term list in {where}")
    dps = obj.get("precision")
    poles = np.empty(n, dtype=complex)
    left = np.empty((n, ny), dtype=complex)
    right = np.empty((n, nu), dtype=complex)
    hp = None
    if dps is not None:
        dps = int(dps)
        hp_p, hp_l, hp_r = [], [], []
        with mpmath.workdps(dps):
            for k, t in enumerate(terms):
                _check_rows(t, ny, nu, where, k)
                p = mpmath.mpc(mpmath.mpf(t["pole"][0]), mpmath.mpf(t["pole"][1]))
                lrow = tuple(mpmath.mpc(mpmath.mpf(a), mpmath.mpf(b))
                             for a, b in t["left"])
                rrow = tuple(mpmath.mpc(mpmath.mpf(a), mpmath.mpf(b))
                             for a, b in t["right"])
                hp_p.append(p)
                hp_l.append(lrow)
                hp_r.append(rrow)
                poles[k] = complex(p)
                left[k] = [complex(v) for v in lrow]
                right[k] = [complex(v) for v in rrow]
        hp = HighPrecisionTerms(tuple(hp_p), tuple(hp_l), tuple(hp_r), dps)
    else:
        for k, t in enumerate(terms):
            pole = _require(t, "pole", f"{where} term {k}")
            lrow = _require(t, "left", f"{where} term {k}")
            rrow = _require(t, "right", f"{where} term {k}")
            _check_rows(t, ny, nu, where, k)
            poles[k] = complex(pole[0], pole[1])
            left[k] = [complex(a, b) for a, b in lrow]
            right[k] = [complex(a, b) for a, b in rrow]
    return PoleResidueModel(poles, left, right, hp=hp)


class DimensionError(DelayH2Error):
    def __init__(self, where: str):
        super().__init__(f"residue shapes disagree with ny/nu in {where}")


def _check_rows(term: dict, ny: int, nu: int, where: str, k: int) -> None:
    # preallocated rows would silently broadcast a short entry
    if len(term.get("left", ())) != ny or len(term.get("right", ())) != nu:
        raise DimensionError(f"{where} term {k}")


def obj_to_model(obj: dict, where: str = "model"):
    kind = _require(obj, "kind", where)
    if kind == "state_space":
        mats = [np.asarray(_require(obj, k, where), dtype=float)
                for k in ("E", "A", "B", "C")]
        return StateSpaceModel(*mats)
    if kind == "pole_residue":
        return _obj_to_pole_residue(obj, where)
    if kind == "delayed":
        core = _obj_to_pole_residue(obj, where)
        din = DelayBlock(tuple(float(d) for d in _require(obj, "input_delays", where)),
                         tuple(bool(b) for b in obj.get("input_mask",
                               [True] * core.nu)))
        dout = DelayBlock(tuple(float(d) for d in _require(obj, "output_delays", where)),
                          tuple(bool(b) for b in obj.get("output_mask",
                                [True] * core.ny)))
        return DelayedModel(core, din, dout)
    raise DelayH2Error(f"unknown model kind {kind!r} in {where}")


def save_model(path, m) -> None:
    write_json(path, model_to_obj(m))


def load_model(path):
    return obj_to_model(read_json(path), where=str(path))


# ---------------------------------------------------------------------------
# reports


def gap_to_obj(gap: GapValue) -> dict:
    return {"j": float(gap.j), "norm_g_sq": float(gap.norm_g_sq),
            "cross": float(gap.cross), "norm_h_sq": float(gap.norm_h_sq)}


def residuals_to_obj(r: OptimalityResiduals) -> dict:
    return {"interp_right": [float(v) for v in r.interp_right],
            "interp_left": [float(v) for v in r.interp_left],
            "interp_hermite": [float(v) for v in r.interp_hermite],
            "delay_in": [float(v) for v in r.delay_in],
            "delay_out": [float(v) for v in r.delay_out],
            "max_residual": float(r.max_residual())}


def report_to_obj(report, config_obj=None) -> dict:
    """Plain-tree form of a ReductionReport, optionally echoing the config."""
    final = model_to_obj(report.model)
    trace = []
    for e in report.trace:
        trace.append({
            "outer": int(e.outer),
            "input_delays": [float(d) for d in e.input_delays],
            "output_delays": [float(d) for d in e.output_delays],
            "poles": [_pair(p) for p in e.poles],
            "left": [[_pair(v) for v in row] for row in e.left],
            "right": [[_pair(v) for v in row] for row in e.right],
            "gap": gap_to_obj(e.gap),
            "irka_iterations": int(e.irka_iterations),
            "irka_converged": bool(e.irka_converged),
        })
    obj = {"model": final,
           "gap": gap_to_obj(report.gap),
           "residuals": residuals_to_obj(report.residuals),
           "outer_iterations": int(report.outer_iterations),
           "converged": bool(report.converged),
           "norm_g_sq": float(report.norm_g_sq),
           "total_reflections": int(report.total_reflections),
           "trace": trace}
    if report.residuals_before_final_pass is not None:
        obj["residuals_before_final_pass"] = residuals_to_obj(
            report.residuals_before_final_pass)
    if config_obj is not None:
        obj["config"] = config_obj
    return obj


def config_to_obj(cfg) -> dict:
    """Plain-tree echo of a (possibly nested) configuration dataclass."""
    import dataclasses
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        return {f.name: config_to_obj(getattr(cfg, f.name))
                for f in dataclasses.fields(cfg)}
    if isinstance(cfg, (list, tuple)):
        return [config_to_obj(v) for v in cfg]
    if isinstance(cfg, np.bool_):
        return bool(cfg)
    if isinstance(cfg, np.integer):
        return int(cfg)
    if isinstance(cfg, np.floating):
        return float(cfg)
    if isinstance(cfg, complex):
        return [cfg.real, cfg.imag]
    return cfg


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, header, rows) -> None:
    """Write numeric rows under a text header, every value as %.12e."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header))
        fh.write("\n")
        for row in rows:
            fh.write(",".join(format(float(v), ".12e") for v in row))
            fh.write("\n")
