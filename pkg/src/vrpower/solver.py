"""Least-squares fitting of linear power models, prediction and model files.

Unbounded fits are a single QR solve. Box-bounded fits use a bounded-variable
active-set iteration (Stark & Parker style): free variables are solved by QR,
variables that would leave the box are clamped, and bound variables whose
gradient points into the box are released, until the projected gradient
vanishes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO, Mapping

import numpy as np

from .dataset import (
    INTERCEPT,
    VARIABLES,
    DesignMatrix,
    Measurement,
    ModelSpec,
    feature_vector,
)
from .errors import (
    ParseError,
    SchemaVersionError,
    SingularDesignError,
    UnderdeterminedError,
    ValidationError,
)

SCHEMA_VERSION = 1
KKT_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class PowerModel:
    """Fitted parameters on scaled features; ``params_raw`` gives W per raw unit."""

    spec: ModelSpec
    params: np.ndarray
    scaling: np.ndarray
    rss: float = 0.0
    n_train: int = 0
    bounds_mode: str = "none"

    def __post_init__(self):
        for name in ("params", "scaling"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.params.shape != (self.spec.n_params,):
            raise ValidationError(
                f"{self.params.size} parameters given for {self.spec.n_params} columns"
            )
        if self.scaling.shape != self.params.shape:
            raise ValidationError("scaling length differs from parameter count")
        if not np.all(np.isfinite(self.params)):
            raise ValidationError("model parameters must be finite")
        if self.bounds_mode == "nonneg" and np.any(self.params < 0):
            raise ValidationError("nonneg model has a negative parameter")

    @property
    def params_raw(self) -> np.ndarray:
        return self.params * self.scaling

    @property
    def intercept(self) -> float:
        return float(self.params[0])

    def param(self, name: str, raw: bool = True) -> float:
        """Parameter by column name (``p_0`` or a variable tag)."""
        try:
            i = self.spec.columns.index(name)
        except ValueError:
            raise KeyError(f"model has no parameter for {name!r}") from None
        return float((self.params_raw if raw else self.params)[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PowerModel):
            return NotImplemented
        return (
            self.spec == other.spec
            and np.array_equal(self.params, other.params)
            and np.array_equal(self.scaling, other.scaling)
            and self.rss == other.rss
            and self.n_train == other.n_train
            and self.bounds_mode == other.bounds_mode
        )


def _back_substitute(R: np.ndarray, y: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    x = np.zeros(k)
    for i in range(k - 1, -1, -1):
        x[i] = (y[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def _lstsq_qr(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(A, mode="reduced")
    return _back_substitute(R, Q.T @ y)


def check_rank(A: np.ndarray, columns: tuple[str, ...]) -> None:
    """Raise ``SingularDesignError`` naming the columns in any near-null combination."""
    n, k = A.shape
    if n < k:
        raise UnderdeterminedError(f"{n} measurements cannot determine {k} parameters")
    norms = np.linalg.norm(A, axis=0)
    zero = [columns[i] for i in np.flatnonzero(norms == 0)]
    if zero:
        raise SingularDesignError(f"all-zero column(s): {', '.join(zero)}", tuple(zero))
    _, s, vt = np.linalg.svd(A / norms, full_matrices=False)
    tol = max(n, k) * np.finfo(float).eps * s[0] * 10
    null = vt[s <= tol]
    if null.size:
        weight = np.max(np.abs(null), axis=0)
        dep = tuple(columns[i] for i in np.flatnonzero(weight > 1e-6))
        raise SingularDesignError(
            f"design matrix is rank deficient (rank {k - null.shape[0]} < {k}); "
            f"linearly dependent columns: {', '.join(dep)}",
            dep,
        )


def _resolve_bounds(bounds, k: int) -> tuple[str, np.ndarray | None]:
    if bounds is None or (isinstance(bounds, str) and bounds == "none"):
        return "none", None
    if isinstance(bounds, str):
        if bounds != "nonneg":
            raise ValidationError(f"unknown bounds mode {bounds!r}")
        box = np.tile([0.0, np.inf], (k, 1))
        return "nonneg", box
    box = np.array(bounds, dtype=float)
    if box.shape != (k, 2):
        raise ValidationError(f"bounds must have shape ({k}, 2), got {box.shape}")
    if np.any(np.isnan(box)) or np.any(box[:, 0] > box[:, 1]):
        raise ValidationError("bounds need lo <= hi for every parameter")
    if np.all(np.isneginf(box[:, 0])) and np.all(np.isposinf(box[:, 1])):
        return "none", None
    if np.all(box[:, 0] == 0) and np.all(np.isposinf(box[:, 1])):
        return "nonneg", box
    return "box", box


def projected_gradient(A: np.ndarray, P: np.ndarray, p: np.ndarray, lo, hi) -> float:
    """Infinity norm of ``clip(p - g) - p`` with ``g`` the least-squares gradient."""
    g = A.T @ (A @ p - P)
    return float(np.max(np.abs(np.clip(p - g, lo, hi) - p)))


def bvls(A: np.ndarray, P: np.ndarray, lo: np.ndarray, hi: np.ndarray,
         max_iter: int | None = None) -> np.ndarray:
    """Minimize ``||A p - P||^2`` subject to ``lo <= p <= hi``. ``A`` must have full column rank."""
    n, k = A.shape
    max_iter = max_iter or 20 * (k + 1) ** 2
    scale = max(1.0, float(np.max(np.abs(A.T @ P))))
    tol = KKT_TOL * scale * 1e-2

    free = np.isneginf(lo) & np.isposinf(hi)
    p = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))

    def solve_free() -> np.ndarray:
        z = p.copy()
        if free.any():
            z[free] = _lstsq_qr(A[:, free], P - A[:, ~free] @ p[~free])
        return z

    if free.any():
        p = solve_free()
    excluded: set[int] = set()
    for _ in range(max_iter):
        g = A.T @ (A @ p - P)
        at_lo = ~free & (p <= lo) & (g < -tol)
        at_hi = ~free & (p >= hi) & (g > tol)
        cand = [i for i in np.flatnonzero(at_lo | at_hi) if i not in excluded]
        if not cand:
            return p
        t = max(cand, key=lambda i: abs(g[i]))
        free[t] = True
        first = True
        while True:
            z = solve_free()
            if first:
                first = False
                # degenerate release: the solve would push t back out of the box
                if (p[t] <= lo[t] and z[t] <= p[t]) or (p[t] >= hi[t] and z[t] >= p[t]):
                    free[t] = False
                    excluded.add(t)
                    break
            viol = free & ((z < lo) | (z > hi))
            if not viol.any():
                p = z
                excluded.clear()
                break
            idx = np.flatnonzero(viol)
            target = np.where(z[idx] < lo[idx], lo[idx], hi[idx])
            steps = (target - p[idx]) / (z[idx] - p[idx])
            j = int(np.argmin(steps))
            alpha = float(np.clip(steps[j], 0.0, 1.0))
            p = np.where(free, p + alpha * (z - p), p)
            p[idx[j]] = target[j]
            free[idx[j]] = False
            hit_lo = free & (p <= lo)
            hit_hi = free & (p >= hi)
            p[hit_lo] = lo[hit_lo]
            p[hit_hi] = hi[hit_hi]
            free &= ~(hit_lo | hit_hi)
    raise RuntimeError(f"bounded least squares did not converge in {max_iter} iterations")


def fit(design: DesignMatrix, bounds=None) -> PowerModel:
    """Least-squares parameters for ``design``.

    ``bounds`` is ``None``/``"none"``, ``"nonneg"`` or a ``(K, 2)`` array of
    per-parameter ``[lo, hi]`` applied to the scaled parameters.
    """
    A, P = design.A, design.P
    n, k = A.shape
    mode, box = _resolve_bounds(bounds, k)
    check_rank(A, design.spec.columns)
    if box is None:
        p = _lstsq_qr(A, P)
    else:
        lo, hi = box[:, 0], box[:, 1]
        p = bvls(A, P, lo, hi)
        pg = projected_gradient(A, P, p, lo, hi)
        limit = KKT_TOL * max(1.0, float(np.max(np.abs(A.T @ P))))
        if pg > limit:
            raise RuntimeError(f"bounded fit stopped off stationarity (projected gradient {pg:.3g})")
    resid = A @ p - P
    return PowerModel(
        spec=design.spec,
        params=p,
        scaling=design.scaling,
        rss=float(resid @ resid),
        n_train=n,
        bounds_mode=mode,
    )


def predict_design(model: PowerModel, A: np.ndarray) -> np.ndarray:
    return np.asarray(A, dtype=float) @ model.params


def predict(model: PowerModel, m: Measurement | Mapping[str, float]) -> float:
    """Estimated power in watts.

    ``m`` is a measurement or a mapping from variable tag to its raw value
    (pixels, fps, bit/s, 0/1). Negative results are returned unchanged.
    """
    if isinstance(m, Measurement):
        return float(feature_vector(m, model.spec) @ model.params)
    missing = [v for v in model.spec.variables if v not in m]
    if missing:
        raise KeyError(f"missing feature(s): {', '.join(missing)}")
    raw = np.array([1.0] + [float(m[v]) for v in model.spec.variables])
    return float(raw @ model.params_raw)


def save_model(model: PowerModel) -> bytes:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "variables": list(model.spec.variables),
        "params_scaled": model.params.tolist(),
        "params_raw_units": model.params_raw.tolist(),
        "scaling": model.scaling.tolist(),
        "diagnostics": {"rss_w2": model.rss, "n_train": model.n_train},
        "bounds_mode": model.bounds_mode,
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


_REQUIRED = ("schema_version", "variables", "params_scaled", "params_raw_units",
             "scaling", "diagnostics", "bounds_mode")


def load_model(source: bytes | BinaryIO) -> PowerModel:
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        doc = json.loads(bytes(raw).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("model file must hold a JSON object")
    if "schema_version" in doc and doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"model schema_version {doc['schema_version']!r} is not supported "
            f"(expected {SCHEMA_VERSION})"
        )
    missing = [f for f in _REQUIRED if f not in doc]
    if missing:
        raise ParseError(f"model file missing field(s): {', '.join(missing)}")
    unknown = [v for v in doc["variables"] if v not in VARIABLES]
    if unknown:
        raise ParseError(f"unknown variable tag(s): {', '.join(map(str, unknown))}")
    try:
        spec = ModelSpec(tuple(doc["variables"]))
    except ValidationError as exc:
        raise ParseError(str(exc)) from None
    params = doc["params_scaled"]
    k = spec.n_params
    for name in ("params_scaled", "params_raw_units", "scaling"):
        if not isinstance(doc[name], list) or len(doc[name]) != k:
            raise ParseError(
                f"{name} has {len(doc[name]) if isinstance(doc[name], list) else '?'} "
                f"entries but {len(spec.variables)} variables need {k} ({INTERCEPT} + variables)"
            )
    diag = doc["diagnostics"]
    if not isinstance(diag, dict) or "rss_w2" not in diag or "n_train" not in diag:
        raise ParseError("diagnostics needs rss_w2 and n_train")
    if doc["bounds_mode"] not in ("none", "nonneg", "box"):
        raise ParseError(f"unknown bounds_mode {doc['bounds_mode']!r}")
    try:
        model = PowerModel(
            spec=spec,
            params=np.array(params, dtype=float),
            scaling=np.array(doc["scaling"], dtype=float),
            rss=float(diag["rss_w2"]),
            n_train=int(diag["n_train"]),
            bounds_mode=doc["bounds_mode"],
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid model values: {exc}") from None
    if not np.allclose(model.params_raw, np.array(doc["params_raw_units"], dtype=float),
                       rtol=1e-12, atol=0.0):
        raise ParseError("params_raw_units disagree with params_scaled * scaling")
    return model
