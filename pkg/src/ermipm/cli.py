"""Command-line driver.

Subcommands: solve, dualize, sparsify-bench, compare-exact, check-barriers.
Exit codes: 0 success, 2 usage, 3 input validation, 4 numerical failure.
Whenever a diagnostics CSV is written, companion PNG figures land next to
it with the same stem.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .barrier import (
    NotInteriorError,
    ball,
    box,
    epigraph_square,
    nonneg_orthant,
    self_concordance_check,
)
from .config import rng_stream
from .dynsparsifier import DecrementalSparsifier, DynamicSparsifier
from .frontend import (
    InstanceFormatError,
    InstanceValidationError,
    dualize,
    load_instance,
    load_primal_spec,
    save_instance,
)
from .ipm import DIAG_FIELDS, IpmConfig, IpmError, solve
from .linalg import NotPositiveDefiniteError, exact_leverage

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


def _resolve_seed(value: int | None) -> int:
    """--seed flag wins; ERM_IPM_SEED is the fallback; default 0."""
    if value is not None:
        return value
    env = os.environ.get("ERM_IPM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InstanceFormatError(f"ERM_IPM_SEED={env!r} is not an integer") from None


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _render_solve_figures(rows, csv_path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = np.array([r[0] for r in rows], dtype=float)
    series = {
        "path parameter t": np.array([r[1] for r in rows], dtype=float),
        "max block centrality": np.array([r[2] for r in rows], dtype=float),
        "potential": np.array([r[3] for r in rows], dtype=float),
        "feasibility norm": np.array([r[4] for r in rows], dtype=float),
    }
    fig, axes = plt.subplots(2, 2, figsize=(9.0, 6.0))
    for ax, (label, vals) in zip(axes.ravel(), series.items()):
        ax.semilogy(it, np.maximum(vals, 1e-18), lw=0.9)
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("iteration", fontsize=8)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    out = csv_path.with_suffix(".png")
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def _render_bench_figures(recs, csv_path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    idx = np.arange(len(recs))
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.4))
    axes[0].plot(idx, [r["tau_sum"] for r in recs], lw=0.9)
    axes[0].set_title("leverage overestimate mass", fontsize=9)
    axes[0].set_xlabel("batch", fontsize=8)
    axes[1].bar(idx, [r["batch_size"] for r in recs], width=0.9)
    axes[1].set_title("rows per batch", fontsize=9)
    axes[1].set_xlabel("batch", fontsize=8)
    for ax in axes:
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    out = csv_path.with_suffix(".png")
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def _config_for(args, seed: int) -> IpmConfig:
    mode = "exact-oracle" if args.mode == "exact" else "sketched"
    if args.profile == "aggressive":
        return IpmConfig.aggressive(mode=mode, seed=seed)
    return IpmConfig.faithful(mode=mode, seed=seed)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    seed = _resolve_seed(args.seed)
    cfg = _config_for(args, seed)
    report = solve(inst, args.eps, cfg)
    print(f"objective {report.objective:.10g}")
    print(f"gap bound {report.gap_bound:.6g}")
    print(f"iterations {report.iterations} (anneal {report.anneal_iterations})")
    print(f"t final {report.t_final:.6g}  mode {report.mode}  profile {report.profile}")
    if args.diag:
        diag = Path(args.diag)
        _write_rows(diag, DIAG_FIELDS, report.diag_rows)
        fig = _render_solve_figures(report.diag_rows, diag)
        print(f"diagnostics {diag} and {fig}")
    if not report.converged:
        print(f"numerical failure: {report.failure}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_dualize(args) -> int:
    spec = load_primal_spec(args.primal)
    inst = dualize(spec)
    out = save_instance(inst, args.output)
    print(
        f"wrote {out}: n={inst.n} d={inst.d} blocks={inst.layout.m} "
        f"kappa={inst.kappa:.6g}"
    )
    return EXIT_OK


def _bench_matrix(n: int, d: int, kappa: float, seed: int) -> np.ndarray:
    rng = rng_stream(seed, "bench.matrix")
    A = rng.standard_normal((n, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    scales = rng.uniform(0.2, 1.0, size=n) * np.sqrt(kappa) * 0.9
    return A * scales[:, None]


def cmd_sparsify_bench(args) -> int:
    seed = _resolve_seed(args.seed)
    halvings = args.halvings if args.halvings is not None else 3 * args.n
    out_csv = Path(args.out)
    rng = rng_stream(seed, "bench.adversary")
    records: list[dict] = []
    if args.adversary in ("maxlev", "random"):
        A = _bench_matrix(args.n, args.d, args.kappa, seed)
        sp = DecrementalSparsifier(A, args.kappa, seed)
        for _ in range(halvings):
            live = sp.live_rows()
            if live.size == 0:
                break
            if args.adversary == "maxlev":
                lev = exact_leverage(sp.A, 1.0 / args.kappa)
                target = int(live[np.argmax(lev[live])])
            else:
                target = int(rng.choice(live))
            sp.halve(target)
        if sp.buffer:
            sp.flush_batch()
        for rec in sp.records:
            records.append({"sparsifier": 0, **rec})
        tau = sp.overestimates()
        live = sp.live_rows()
        exact = exact_leverage(sp.A, 1.0 / args.kappa)
        violations = int(np.sum(tau[live] < exact[live] * (1.0 - 1e-9)))
        tau_sum = float(tau[live].sum())
        clamps = sp.clamp_warnings
    else:  # churn: interleaved inserts and deletes on the dynamic wrapper
        dyn = DynamicSparsifier(args.d, args.kappa, seed)
        alive: list[int] = []
        total = 0
        while total < halvings:
            burst = min(max(args.n // 8, 1), halvings - total) or 1
            rows = _bench_matrix(burst, args.d, args.kappa, seed + total + 1)
            alive.extend(dyn.dyn_insert(rows))
            total += burst
            while len(alive) > args.n:
                dyn.dyn_delete(alive.pop(0))
        for sid, sp in sorted(dyn.levels.items()):
            for rec in sp.records:
                records.append({"sparsifier": sid, **rec})
        tau_map = dyn.overestimates()
        tau_sum = float(sum(tau_map.values()))
        violations = 0
        for sid, sp in dyn.levels.items():
            live = sp.live_rows()
            if live.size == 0:
                continue
            exact = exact_leverage(sp.A, 1.0 / args.kappa)
            tau = sp.overestimates()
            violations += int(np.sum(tau[live] < exact[live] * (1.0 - 1e-9)))
        clamps = sum(sp.clamp_warnings for sp in dyn.levels.values())
    header = ["sparsifier", "q", "batch_size", "removed_leverage", "tau_sum", "candidates_checked"]
    _write_rows(out_csv, header, [[r[h] for h in header] for r in records])
    if records:
        fig = _render_bench_figures(records, out_csv)
        print(f"diagnostics {out_csv} and {fig}")
    print(
        f"batches {len(records)}  tau_sum {tau_sum:.6g}  "
        f"oracle violations {violations}  psd clamps {clamps}"
    )
    return EXIT_NUMERICAL if violations else EXIT_OK


def cmd_compare_exact(args) -> int:
    inst = load_instance(args.instance)
    base = _resolve_seed(args.seed)
    print("seed exact_objective sketched_objective delta violations")
    worst = 0.0
    for j in range(args.seeds):
        seed = base + j
        exact_cfg = IpmConfig.aggressive(mode="exact-oracle", seed=seed, instrument=False)
        sk_cfg = IpmConfig.aggressive(mode="sketched", seed=seed, instrument=False)
        rep_e = solve(inst, args.eps, exact_cfg)
        rep_s = solve(inst, args.eps, sk_cfg)
        sched = sk_cfg.schedule(inst.n, sum(b.nu for b in inst.barriers))
        st = rep_s.stats
        bounds = [
            (st["gamma_max"], sk_cfg.eps**2),
            (st["g_norm_max"], sched.alpha * sk_cfg.eps),
            (st["delta1_max"], sched.alpha * sk_cfg.eps * np.exp(sk_cfg.eps)),
            (st["delta2_max"], sched.alpha * sk_cfg.eps * np.exp(1.5 * sk_cfg.eps)),
            (st["feas_post_max"], sched.alpha**2 + 1e-10),
            (st["dual_drift_max"], 2e-9 * (1.0 + float(np.abs(inst.c).max()))),
        ]
        violations = sum(1 for v, lim in bounds if v > lim * (1.0 + 1e-9))
        delta = rep_s.objective - rep_e.objective
        worst = max(worst, abs(delta))
        print(
            f"{seed} {rep_e.objective!r} {rep_s.objective!r} {delta:.3e} {violations}"
        )
    print(f"max |delta| {worst:.3e}")
    return EXIT_OK


def cmd_check_barriers(args) -> int:
    cases = [
        nonneg_orthant(1),
        nonneg_orthant(3),
        box([-1.0, 0.0], [2.0, 1.0]),
        ball(1.5, 2),
        epigraph_square(1.0),
        epigraph_square(0.25),
    ]
    bad = 0
    for b in cases:
        rep = self_concordance_check(b, trials=args.trials, seed=_resolve_seed(args.seed))
        n_viol = rep["nu_violations"] + rep["sc_violations"]
        bad += n_viol
        label = f"{rep['kind']}(nu={rep['nu']:g})"
        print(
            f"{label:28s} max_nu {rep['max_nu_value']:.4f}  "
            f"max_sc_ratio {rep['max_sc_ratio']:.4f}  violations {n_viol}"
        )
    if bad:
        print(f"numerical failure: {bad} self-concordance violations", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ermipm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the path follower on an instance file")
    sp.add_argument("instance")
    sp.add_argument("--eps", type=float, default=1e-3, help="target duality gap")
    sp.add_argument("--mode", choices=("exact", "sketched"), default="exact")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--profile", choices=("faithful", "aggressive"), default="aggressive")
    sp.add_argument("--diag", default=None, help="CSV path; figures land next to it")
    sp.set_defaults(func=cmd_solve)

    dp = sub.add_parser("dualize", help="conjugate transform of a primal spec")
    dp.add_argument("primal")
    dp.add_argument("-o", "--output", required=True)
    dp.set_defaults(func=cmd_dualize)

    bp = sub.add_parser("sparsify-bench", help="drive the decremental sparsifier")
    bp.add_argument("--n", type=int, default=256)
    bp.add_argument("--d", type=int, default=16)
    bp.add_argument("--kappa", type=float, default=32.0)
    bp.add_argument("--adversary", choices=("maxlev", "random", "churn"), default="random")
    bp.add_argument("--seed", type=int, default=None)
    bp.add_argument("--halvings", type=int, default=None, help="0 runs no updates")
    bp.add_argument("--out", default="sparsify_bench.csv")
    bp.set_defaults(func=cmd_sparsify_bench)

    cp = sub.add_parser("compare-exact", help="exact vs sketched over several seeds")
    cp.add_argument("instance")
    cp.add_argument("--eps", type=float, default=1e-2)
    cp.add_argument("--seeds", type=int, default=3)
    cp.add_argument("--seed", type=int, default=None, help="base seed")
    cp.set_defaults(func=cmd_compare_exact)

    kp = sub.add_parser("check-barriers", help="self-concordance spot checks")
    kp.add_argument("--trials", type=int, default=100)
    kp.add_argument("--seed", type=int, default=None)
    kp.set_defaults(func=cmd_check_barriers)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceFormatError, InstanceValidationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IpmError, NotPositiveDefiniteError, NotInteriorError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
