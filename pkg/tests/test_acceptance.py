"""Exit criteria. Each test prints one PASS/FAIL line; a summary is shown at the end of the run."""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, normal_equation_solve
from vrpower.cli import main
from vrpower.dataset import ADVANCED, SIMPLIFIED, ModelSpec, DesignMatrix, build_design
from vrpower.evaluation import contribution_matrix, contributions, cross_validate, error_metrics, prune_audit
from vrpower.solver import PowerModel, fit, save_model
from vrpower.synth import DEFAULT_GROUND_TRUTH, SynthConfig, generate
from vrpower.trace import PowerTrace, WindowSpec, mean_power


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_parameter_recovery():
    cfg = SynthConfig()
    ms = generate(cfg)
    t0 = time.perf_counter()
    model = fit(build_design(ms, ADVANCED))
    elapsed = time.perf_counter() - t0
    rel = np.abs(model.params_raw - cfg.params_raw) / np.abs(cfg.params_raw)
    ok = len(ms) == 768 and rel.max() <= 1e-8 and elapsed < 1.0
    record(1, "parameter recovery", ok,
           f"N={len(ms)}, max rel err {rel.max():.2e} (<=1e-8), fit {elapsed * 1e3:.1f} ms (<1 s)")


def test_2_normal_equation_equivalence():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(6, 21))
        k = int(rng.integers(2, 6))
        A = np.column_stack([np.ones(n), rng.uniform(0, 5, (n, k - 1))])
        P = rng.uniform(0.5, 3.0, n)
        spec = ModelSpec(ADVANCED.variables[: k - 1])
        d = DesignMatrix(A, P, np.ones(k), tuple(map(str, range(n))), spec)
        ref = np.array(normal_equation_solve(A, P))
        got = fit(d).params
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    record(2, "normal-equation equivalence", worst <= 1e-8,
           f"10 instances, worst rel diff {worst:.2e} (<=1e-8)")


def test_3_noise_consistency():
    t0 = time.perf_counter()
    errs = [cross_validate(generate(SynthConfig(noise_sigma=0.02, seed=s)), ADVANCED).mean_rel_error
            for s in range(20)]
    elapsed = time.perf_counter() - t0
    ok = all(0.01 <= e <= 0.03 for e in errs) and elapsed < 30
    target = 0.02 * math.sqrt(2 / math.pi)
    record(3, "noise consistency", ok,
           f"20 seeds, mean error in [{min(errs) * 100:.3f}, {max(errs) * 100:.3f}] % "
           f"(bounds [1, 3] %, analytic {target * 100:.2f} %), {elapsed:.1f} s (<30 s)")


def test_4_pruning_reproduction():
    runs = [generate(SynthConfig())] + [
        generate(SynthConfig(noise_sigma=0.02, seed=s)) for s in range(5)
    ]
    specs, minor = [], 0.0
    for ms in runs:
        res = prune_audit(ms, ADVANCED, 0.5)
        again = prune_audit(ms, ADVANCED, 0.5)
        assert res == again
        specs.append(res.spec)
    clean = prune_audit(runs[0], ADVANCED, 0.5)
    minor = max(s.increase for s in clean.steps if s.variable not in SIMPLIFIED.variables)
    ok = all(s == SIMPLIFIED for s in specs) and minor <= 0.3
    record(4, "pruning reproduction", ok,
           f"retained {sorted(set(str(s) for s in specs))} on 1 clean + 5 noisy sets "
           f"(expect b,S,F_360); largest minor-variable effect {minor:.3f} pp (<=0.3)")


def test_5_savings_arithmetic(tmp_path, capsys):
    model = PowerModel(SIMPLIFIED, [0.97, 0.004, 5.0196e-8 / 1e-6, 0.1], SIMPLIFIED.scaling)
    path = tmp_path / "model.json"
    path.write_bytes(save_model(model))
    out = tmp_path / "savings.json"
    code = main(["savings", str(path), "--from", "3840x1920", "--to", "1920x1080",
                 "--reference-w", "1.5465", "-o", str(out)])
    doc = json.loads(out.read_text())
    dp, rel = doc["delta_p_w"], doc["relative_saving"] * 100
    ok = code == 0 and abs(dp - 0.266) <= 0.001 and abs(rel - 17.2) <= 0.1
    record(5, "savings arithmetic", ok, f"delta_p {dp:.6f} W (0.266 +- 0.001), {rel:.3f} % (17.2 +- 0.1)")


def test_6_error_metric_exactness():
    mean, mx = error_metrics([2.0, 4.0], [2.2, 3.8])
    # exact up to the binary representation of 2.2 and 3.8
    ok = abs(mean - 0.075) <= 1e-15 and abs(mx - 0.10) <= 1e-15
    record(6, "error-metric exactness", ok, f"({mean * 100:.12f} %, {mx * 100:.12f} %) vs (7.5 %, 10 %)")


def test_7_contribution_sanity():
    ms = generate(SynthConfig())
    model = fit(build_design(ms, ADVANCED))
    dev = float(np.max(np.abs(contribution_matrix(model, ms).sum(axis=1) * 100 - 100)))
    odd = generate(SynthConfig(dict(DEFAULT_GROUND_TRUTH, F_st=-0.05)))
    c0 = contributions(fit(build_design(odd, ADVANCED)), odd)["p_0"].c_max * 100
    ok = dev <= 1e-9 and c0 > 100
    record(7, "contribution sanity", ok,
           f"signed sum deviates {dev:.2e} pp from 100 % (<=1e-9); constructed intercept C_max {c0:.2f} % (>100)")


def test_8_trace_reduction(tmp_path, capsys):
    t = np.linspace(0, 10, 10001)
    got = mean_power(PowerTrace(t, t), WindowSpec(2.0, 7.0))
    rel = abs(got - 5.5) / 5.5
    lines = ["time_s,power_w"] + [f"{x!r},4.0" for x in np.linspace(0, 11, 111).tolist()]
    (tmp_path / "run.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "s.csv").write_text(
        "trace,sequence,width,height,fps,bitrate_bps,codec,crf,app,f_st,f_dyn,f_360,f_3d,f_gyro,f_accel,f_magn\n"
        "run.csv,X,416,240,30,100000,HEVC,28,VaR,0,0,0,0,0,0,0\n")
    code = main(["ingest", str(tmp_path / "s.csv"), "--idle-w", "5.0", "-o", str(tmp_path / "m.csv")])
    err = capsys.readouterr().err
    ok = rel <= 1e-9 and code != 0 and err.startswith("error[negative-net]:")
    record(8, "trace reduction", ok,
           f"ramp mean {got!r} W vs 5.5 (rel {rel:.1e} <=1e-9); negative net exit {code}, {err.split(':')[0]}")


def _pipeline(d):
    d.mkdir()
    m = str(d / "m.csv")
    assert main(["synth", "-o", m, "--sigma", "0.02", "--seed", "42"]) == 0
    assert main(["fit", m, "-o", str(d / "model.json")]) == 0
    assert main(["cv", m, "-o", str(d / "cv")]) == 0
    assert main(["prune", m, "-o", str(d / "spec.json"), "--audit", str(d / "audit.csv")]) == 0
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if "manifest" not in p.name}


def test_9_determinism(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    ok = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    record(9, "determinism", ok, f"{len(a)} files byte-identical across two runs: {', '.join(a)}")
