"""JSON file formats for episodes, parameters and fit reports.

Every document carries a ``format`` tag and a ``version``. Floats are
written with 17 significant digits so files round-trip bit for bit; NaN is
written as ``null`` and infinities as the strings ``"inf"`` / ``"-inf"``.
Simulated episodes keep their true parameters in a separate ``sidecar``
object that the episode reader never looks at.
"""

from __future__ import annotations

import json
import math
from typing import Any, Optional

import numpy as np

from banditfit.errors import InvalidInputError
from banditfit.model import BanditSpec, Episode, Params
from banditfit.pipeline import FitReport
from banditfit.recovery import Certificate
from banditfit.relax import RelaxedSolution

__all__ = [
    "FORMAT_VERSION",
    "FormatError",
    "dumps",
    "episode_to_doc",
    "episode_from_doc",
    "params_to_doc",
    "params_from_doc",
    "report_to_doc",
    "report_from_doc",
    "bound_to_doc",
    "read_doc",
    "write_doc",
]

FORMAT_VERSION = 1


class FormatError(InvalidInputError):
    """A document that cannot be parsed; the message names the offending field."""

    def __init__(self, field: str, problem: str):
        super().__init__(f"field '{field}': {problem}")
        self.field = field


# -- emitter ---------------------------------------------------------------


def _float(x: float) -> str:
    if math.isnan(x):
        return "null"
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, val) in enumerate(obj.items()):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _emit(val, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            # scalar rows stay on one line to keep files compact and diffable
            parts = []
            for v in obj:
                buf = []
                _emit(v, indent, level + 1, buf)
                parts.append("".join(buf))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, val in enumerate(obj):
            out.append(pad)
            _emit(val, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc: Any, indent: int = 2) -> str:
    """Serialize ``doc`` deterministically with 17-digit floats."""
    out: list = []
    _emit(doc, indent, 0, out)
    out.append("\n")
    return "".join(out)


def _to_float(v):
    if v is None:
        return math.nan
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return float(v)


def _loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("<document>", f"not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError("<document>", "top level must be an object")
    return doc


def read_doc(path_or_text: str, is_text: bool = False) -> dict:
    if is_text:
        return _loads(path_or_text)
    with open(path_or_text, encoding="utf-8") as fh:
        return _loads(fh.read())


def write_doc(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc))


# -- field access ----------------------------------------------------------


def _get(doc: dict, name: str, prefix: str = ""):
    full = prefix + name
    if name not in doc:
        raise FormatError(full, "missing")
    return doc[name]


def _check_header(doc: dict, kind: str) -> None:
    fmt = _get(doc, "format")
    if fmt != kind:
        raise FormatError("format", f"expected {kind!r}, got {fmt!r}")
    version = _get(doc, "version")
    if version != FORMAT_VERSION:
        raise FormatError("version", f"unsupported version {version!r}")


def _int(doc, name, prefix=""):
    v = _get(doc, name, prefix)
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(prefix + name, f"expected an integer, got {v!r}")
    return v


def _array(doc, name, ndim, prefix="", nullable=False):
    v = _get(doc, name, prefix)
    try:
        arr = np.array(_nan_from_null(v) if nullable else v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(prefix + name, f"not a numeric array ({exc})") from exc
    if arr.ndim != ndim:
        raise FormatError(prefix + name, f"expected a {ndim}-d array, got {arr.ndim}-d")
    return arr


def _nan_from_null(v):
    if isinstance(v, list):
        return [_nan_from_null(x) for x in v]
    return _to_float(v)


# -- episodes and parameters -----------------------------------------------


def episode_to_doc(episode: Episode, spec: BanditSpec, sidecar: Optional[dict] = None) -> dict:
    episode.check(spec)
    doc = {
        "format": "banditfit.episode",
        "version": FORMAT_VERSION,
        "m": spec.m,
        "k": spec.k,
        "weights": spec.w,
        "actions": episode.actions,
        "signals": [s for s in episode.signals],
    }
    if sidecar is not None:
        doc["sidecar"] = sidecar
    return doc


def episode_from_doc(doc: dict):
    """Parse an episode document into ``(Episode, BanditSpec)``; the sidecar is ignored."""
    _check_header(doc, "banditfit.episode")
    m, k = _int(doc, "m"), _int(doc, "k")
    w = _array(doc, "weights", 1)
    try:
        spec = BanditSpec(m, k, w)
    except InvalidInputError as exc:
        raise FormatError("m/k/weights", str(exc)) from exc
    acts = _get(doc, "actions")
    if not isinstance(acts, list) or any(isinstance(a, bool) or not isinstance(a, int) for a in acts):
        raise FormatError("actions", "expected a list of integer arm indices")
    sigs = _get(doc, "signals")
    if not isinstance(sigs, list) or len(sigs) != k:
        raise FormatError("signals", f"expected {k} signal blocks")
    mats = []
    for i, s in enumerate(sigs):
        try:
            a = np.array(s, dtype=float)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"signals[{i}]", f"not a numeric matrix ({exc})") from exc
        if a.shape != (len(acts), m):
            raise FormatError(f"signals[{i}]", f"expected shape ({len(acts)}, {m}), got {a.shape}")
        mats.append(a)
    try:
        episode = Episode(np.array(acts, dtype=np.int64), tuple(mats))
        episode.check(spec)
    except InvalidInputError as exc:
        raise FormatError("actions", str(exc)) from exc
    return episode, spec


def _params_body(params: Params) -> dict:
    return {"alpha": params.alpha, "beta": params.beta}


def _params_from_body(body, prefix: str) -> Params:
    if not isinstance(body, dict):
        raise FormatError(prefix.rstrip("."), "expected an object")
    a = _array(body, "alpha", 2, prefix)
    b = _array(body, "beta", 2, prefix)
    try:
        return Params(a, b)
    except InvalidInputError as exc:
        raise FormatError(prefix + "alpha/beta", str(exc)) from exc


def params_to_doc(params: Params) -> dict:
    return {"format": "banditfit.params", "version": FORMAT_VERSION, **_params_body(params)}


def params_from_doc(doc: dict) -> Params:
    """Accepts a params document, or a report document (its fitted parameters)."""
    if doc.get("format") == "banditfit.report":
        _check_header(doc, "banditfit.report")
        return _params_from_body(_get(_get(doc, "report"), "params", "report."), "report.params.")
    _check_header(doc, "banditfit.params")
    return _params_from_body(doc, "")


# -- reports ---------------------------------------------------------------


def _cert_to_body(cert: Optional[Certificate]):
    if cert is None:
        return None
    return {
        "global_optimal": cert.global_optimal,
        "L_total": cert.L_total,
        "epsilon": cert.epsilon,
        "eps_tilde": cert.eps_tilde,
        "max_abs_dev": cert.max_abs_dev,
        "gap": cert.gap,
        "truncated": cert.truncated,
        "decay_ratios": [np.asarray(r) for r in cert.decay_ratios],
    }


def _cert_from_body(body) -> Optional[Certificate]:
    if body is None:
        return None
    pre = "report.certificate."
    ratios = _get(body, "decay_ratios", pre)
    return Certificate(
        global_optimal=bool(_get(body, "global_optimal", pre)),
        L_total=_to_float(_get(body, "L_total", pre)),
        epsilon=_to_float(_get(body, "epsilon", pre)),
        eps_tilde=_to_float(_get(body, "eps_tilde", pre)),
        max_abs_dev=_to_float(_get(body, "max_abs_dev", pre)),
        gap=_to_float(_get(body, "gap", pre)),
        truncated=bool(_get(body, "truncated", pre)),
        decay_ratios=tuple(np.array(_nan_from_null(r), dtype=float) for r in ratios),
    )


def _opt(v):
    return None if v is None else _to_float(v)


def report_to_doc(report: FitReport, options: dict, tool_version: str) -> dict:
    body = {
        "method": report.method,
        "n": report.n,
        "p": report.p,
        "params": _params_body(report.params),
        "J_ub": report.J_ub,
        "J_lb": report.J_lb,
        "gap": report.gap,
        "lb_truncated": report.lb_truncated,
        "converged": report.converged,
        "L_total": report.L_total,
        "certificate": _cert_to_body(report.certificate),
        "diagnostics": report.diagnostics,
    }
    return {
        "format": "banditfit.report",
        "version": FORMAT_VERSION,
        "tool_version": tool_version,
        "options": options,
        "report": body,
    }


def _restore(v):
    # inverse of the emitter for free-form diagnostics
    if isinstance(v, dict):
        return {k: _restore(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_restore(x) for x in v]
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return v


def report_from_doc(doc: dict) -> FitReport:
    _check_header(doc, "banditfit.report")
    body = _get(doc, "report")
    pre = "report."
    return FitReport(
        method=str(_get(body, "method", pre)),
        params=_params_from_body(_get(body, "params", pre), pre + "params."),
        J_ub=_to_float(_get(body, "J_ub", pre)),
        J_lb=_opt(_get(body, "J_lb", pre)),
        gap=_opt(_get(body, "gap", pre)),
        n=_int(body, "n", pre),
        p=_int(body, "p", pre),
        lb_truncated=bool(_get(body, "lb_truncated", pre)),
        converged=bool(_get(body, "converged", pre)),
        L_total=_opt(_get(body, "L_total", pre)),
        certificate=_cert_from_body(_get(body, "certificate", pre)),
        diagnostics=_restore(_get(body, "diagnostics", pre)),
    )


def bound_to_doc(
    sol: RelaxedSolution,
    options: dict,
    tool_version: str,
    audit_params: Optional[Params] = None,
    audit_J: Optional[float] = None,
) -> dict:
    """Lower-bound-only report, optionally auditing third-party parameters."""
    body = {
        "method": "bound",
        "n": sol.n,
        "p": sol.p,
        "J_lb": sol.J_lb,
        "lb_truncated": sol.truncated,
        "converged": sol.converged,
        "kernels": list(sol.Gs),
        "diagnostics": {"solver_iters": sol.iters, "pg_norm": sol.pg_norm},
    }
    if audit_params is not None:
        body["audit"] = {
            "params": _params_body(audit_params),
            "J": audit_J,
            "gap": audit_J - sol.J_lb,
        }
    return {
        "format": "banditfit.bound",
        "version": FORMAT_VERSION,
        "tool_version": tool_version,
        "options": options,
        "report": body,
    }
