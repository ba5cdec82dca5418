"""Leave-one-sequence-out validation, variable pruning and model interrogation."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import (
    FLAGS,
    INTERCEPT,
    Measurement,
    ModelSpec,
    build_design,
    raw_feature_vector,
)
from .errors import (
    FoldError,
    SingularDesignError,
    UnderdeterminedError,
    UnsupportedQueryError,
    ValidationError,
    ZeroPowerError,
)
from .solver import PowerModel, fit, predict, predict_design


@dataclass(frozen=True)
class HeldOut:
    index: int
    sequence: str
    measured: float
    estimated: float
    rel_error: float


@dataclass(frozen=True)
class Fold:
    sequence: str
    params: tuple[float, ...]
    n_train: int


@dataclass(frozen=True)
class EvaluationReport:
    spec: ModelSpec
    per_measurement: tuple[HeldOut, ...]
    mean_rel_error: float
    max_rel_error: float
    folds: tuple[Fold, ...] = ()


@dataclass(frozen=True)
class Contribution:
    variable: str
    c_max: float
    witness_index: int
    witness_sequence: str


@dataclass(frozen=True)
class ContributionReport:
    per_variable: tuple[Contribution, ...]

    def __getitem__(self, variable: str) -> Contribution:
        for c in self.per_variable:
            if c.variable == variable:
                return c
        raise KeyError(variable)


@dataclass(frozen=True)
class SavingsEstimate:
    from_resolution: int
    to_resolution: int
    delta_p: float
    reference_power: float | None = None
    relative_saving: float | None = None


def error_metrics(measured, estimated) -> tuple[float, float]:
    """Mean and maximum of ``|estimated - measured| / measured``."""
    measured = np.asarray(measured, dtype=float)
    estimated = np.asarray(estimated, dtype=float)
    if measured.shape != estimated.shape or measured.ndim != 1:
        raise ValidationError(
            f"measured and estimated lengths differ ({measured.shape} vs {estimated.shape})"
        )
    if measured.size == 0:
        raise ValidationError("error metrics need at least one measurement")
    if np.any(measured == 0):
        raise ZeroPowerError("measured power of 0 W makes the relative error undefined")
    rel = np.abs((estimated - measured) / measured)
    return float(np.mean(rel)), float(np.max(rel))


def _fit_fold(design, train_idx, name, bounds):
    try:
        return fit(design.rows(train_idx), bounds)
    except (SingularDesignError, UnderdeterminedError) as exc:
        raise FoldError(f"fold holding out {name!r}: {exc}", name) from exc


def cross_validate(measurements: Sequence[Measurement], spec: ModelSpec,
                   bounds=None, jobs: int = 1) -> EvaluationReport:
    """Hold out each source sequence in turn, train on the rest, predict the held-out rows.

    ``per_measurement`` follows input order; ``folds`` are sorted by sequence
    name, so the report does not depend on ``jobs``.
    """
    design = build_design(measurements, spec)
    names = np.array(design.row_keys, dtype=object)
    groups = sorted(set(design.row_keys))
    if len(groups) < 2:
        raise ValidationError("cross-validation needs at least 2 distinct sequences")
    zero = np.flatnonzero(design.P == 0)
    if zero.size:
        j = int(zero[0])
        raise ZeroPowerError(
            f"measurement {j} ({design.row_keys[j]!r}) has measured power 0 W"
        )

    def run(name):
        test = names == name
        model = _fit_fold(design, ~test, name, bounds)
        return name, model, np.flatnonzero(test), predict_design(model, design.A[test])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, groups))
    else:
        results = [run(g) for g in groups]

    estimated = np.empty(design.P.shape)
    folds = []
    for name, model, idx, est in sorted(results, key=lambda r: r[0]):
        estimated[idx] = est
        folds.append(Fold(name, tuple(model.params.tolist()), model.n_train))
    rel = (estimated - design.P) / design.P
    mean_err, max_err = error_metrics(design.P, estimated)
    held = tuple(
        HeldOut(j, design.row_keys[j], float(design.P[j]), float(estimated[j]), float(rel[j]))
        for j in range(len(rel))
    )
    return EvaluationReport(spec, held, mean_err, max_err, tuple(folds))


def training_error(measurements: Sequence[Measurement], spec: ModelSpec,
                   bounds=None) -> float:
    """Mean relative error of a model fitted and evaluated on the same data."""
    design = build_design(measurements, spec)
    model = fit(design, bounds)
    return error_metrics(design.P, predict_design(model, design.A))[0]


@dataclass(frozen=True)
class PruneStep:
    variable: str
    error_without: float
    baseline_error: float
    increase: float
    retained: bool


@dataclass(frozen=True)
class PruneResult:
    spec: ModelSpec
    baseline_error: float
    steps: tuple[PruneStep, ...] = field(default=())


def _increase(err: float, base: float, kind: str) -> float:
    if kind == "absolute":
        return (err - base) * 100.0
    if base == 0:
        return math.inf if err > base else 0.0
    return (err - base) / base * 100.0


def prune_audit(measurements: Sequence[Measurement], baseline: ModelSpec,
                threshold: float = 0.5, mode: str = "one-at-a-time",
                threshold_kind: str = "absolute", criterion: str = "cv",
                bounds=None, jobs: int = 1) -> PruneResult:
    """Drop variables whose removal raises the mean relative error by less than ``threshold``.

    ``threshold_kind="absolute"`` compares the increase in percentage points,
    ``"relative"`` in percent of the baseline error. A variable whose removal
    raises the error by exactly ``threshold`` is kept.

    ``mode="one-at-a-time"`` tests every variable against the full baseline
    and removes all failing ones at once. ``mode="sequential"`` removes the
    least useful variable, re-baselines and repeats.
    """
    if mode not in ("one-at-a-time", "sequential"):
        raise ValidationError(f"unknown pruning mode {mode!r}")
    if threshold_kind not in ("absolute", "relative"):
        raise ValidationError(f"unknown threshold kind {threshold_kind!r}")
    if criterion not in ("cv", "train"):
        raise ValidationError(f"unknown error criterion {criterion!r}")

    def error(spec):
        if criterion == "train":
            return training_error(measurements, spec, bounds)
        return cross_validate(measurements, spec, bounds, jobs).mean_rel_error

    base = error(baseline)
    if mode == "one-at-a-time":
        steps = []
        for v in baseline.variables:
            err = error(baseline.without(v))
            inc = _increase(err, base, threshold_kind)
            steps.append(PruneStep(v, err, base, inc, inc >= threshold))
        kept = tuple(s.variable for s in steps if s.retained)
        return PruneResult(ModelSpec(kept), base, tuple(steps))

    current, current_err, steps = baseline, base, []
    while current.variables:
        trials = []
        for v in current.variables:
            err = error(current.without(v))
            trials.append((_increase(err, current_err, threshold_kind), v, err))
        inc, v, err = min(trials, key=lambda t: (t[0], current.variables.index(t[1])))
        if inc >= threshold:
            break
        steps.append(PruneStep(v, err, current_err, inc, False))
        current, current_err = current.without(v), err
    steps += [PruneStep(v, math.nan, current_err, math.nan, True) for v in current.variables]
    return PruneResult(current, base, tuple(steps))


def prune_variables(measurements: Sequence[Measurement], baseline: ModelSpec,
                    threshold: float = 0.5, **kwargs) -> ModelSpec:
    return prune_audit(measurements, baseline, threshold, **kwargs).spec


def contribution_matrix(model: PowerModel, measurements: Sequence[Measurement]) -> np.ndarray:
    """Signed shares ``A(j,k) p(k) / P(j)`` in raw units, one row per measurement."""
    raw = np.vstack([raw_feature_vector(m, model.spec) for m in measurements])
    P = np.array([m.power for m in measurements], dtype=float)
    if np.any(P == 0):
        j = int(np.flatnonzero(P == 0)[0])
        raise ZeroPowerError(f"measurement {j} has measured power 0 W")
    return raw * model.params_raw / P[:, None]


def contributions(model: PowerModel, measurements: Sequence[Measurement]) -> ContributionReport:
    """Largest share of measured power each parameter-variable product takes, intercept included."""
    if not measurements:
        raise ValidationError("contributions need at least one measurement")
    shares = np.abs(contribution_matrix(model, measurements))
    out = []
    for k, name in enumerate(model.spec.columns):
        j = int(np.argmax(shares[:, k]))
        out.append(Contribution(name, float(shares[j, k]), j, measurements[j].sequence.name))
    return ContributionReport(tuple(out))


def estimate_savings(model: PowerModel, from_res: tuple[int, int], to_res: tuple[int, int],
                     reference: Measurement | float | None = None) -> SavingsEstimate:
    """Predicted power saved by switching resolution, ``(S_from - S_to) * p_S``."""
    if "S" not in model.spec.variables:
        raise UnsupportedQueryError("model has no resolution term S; cannot estimate savings")
    for w, h in (from_res, to_res):
        if not (w > 0 and h > 0):
            raise ValidationError(f"resolution must be positive, got {w}x{h}")
    s_from = int(from_res[0]) * int(from_res[1])
    s_to = int(to_res[0]) * int(to_res[1])
    delta = (s_from - s_to) * model.param("S", raw=True)
    if reference is None:
        return SavingsEstimate(s_from, s_to, delta)
    ref = predict(model, reference) if isinstance(reference, Measurement) else float(reference)
    if ref == 0:
        raise ZeroPowerError("reference power of 0 W")
    return SavingsEstimate(s_from, s_to, delta, ref, delta / ref)


# -- report emission --------------------------------------------------------

def _csv(rows: list[list]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _num(x: float) -> str:
    return repr(float(x))


def evaluation_csv(report: EvaluationReport, measurements: Sequence[Measurement]) -> bytes:
    header = ["index", "sequence", "codec", "crf", "app", *[f.lower() for f in FLAGS],
              "measured_w", "estimated_w", "rel_error"]
    rows = [header]
    for h in report.per_measurement:
        m = measurements[h.index]
        rows.append([h.index, h.sequence, m.sequence.codec.value, m.sequence.crf, m.config.app,
                     *m.config.flags(), _num(h.measured), _num(h.estimated), _num(h.rel_error)])
    return _csv(rows)


def folds_csv(report: EvaluationReport) -> bytes:
    rows = [["held_out", "n_train", *report.spec.columns]]
    rows += [[f.sequence, f.n_train, *map(_num, f.params)] for f in report.folds]
    return _csv(rows)


def summary_csv(report: EvaluationReport) -> bytes:
    return _csv([
        ["spec", "n", "mean_rel_error", "max_rel_error"],
        [str(report.spec) or INTERCEPT, len(report.per_measurement),
         _num(report.mean_rel_error), _num(report.max_rel_error)],
    ])


def contributions_csv(report: ContributionReport) -> bytes:
    """Plot-ready bar data: one row per parameter-variable product."""
    rows = [["variable", "c_max_pct", "witness_index", "witness_sequence"]]
    rows += [[c.variable, _num(c.c_max * 100.0), c.witness_index, c.witness_sequence]
             for c in report.per_variable]
    return _csv(rows)


def breakdown_csv(model: PowerModel, measurements: Sequence[Measurement]) -> bytes:
    """Measured power next to the stacked per-term estimate, one row per measurement."""
    raw = np.vstack([raw_feature_vector(m, model.spec) for m in measurements])
    terms = raw * model.params_raw
    rows = [["index", "sequence", "crf", "f_360", "measured_w",
             *[f"term_{c}_w" for c in model.spec.columns], "estimated_w"]]
    for j, m in enumerate(measurements):
        rows.append([j, m.sequence.name, m.sequence.crf, m.config.F_360, _num(m.power),
                     *map(_num, terms[j]), _num(terms[j].sum())])
    return _csv(rows)


def prune_csv(result: PruneResult) -> bytes:
    rows = [["variable", "baseline_error", "error_without", "increase", "retained"]]
    rows += [[s.variable, _num(s.baseline_error), _num(s.error_without), _num(s.increase),
              int(s.retained)] for s in result.steps]
    return _csv(rows)


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
