#!/usr/bin/env python3
"""
FD-DLM 增廣拉格朗日命令行工具
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from core.config import settings
from core.exceptions import NonConvergence
from models.config import ExperimentConfig
from models.report import DAGGER
from repositories.matrix_repository import MatrixMarketRepository
from repositories.result_repository import ResultRepository
from services.al_service import al_service
from services.bench_service import bench_service, load_experiment_config

VARIANTS = ["ideal_al", "inexact_al", "mal", "mal_diag", "baseline_triangular", "none"]


def default_experiment() -> ExperimentConfig:
    """The 1251-unknown unit-square problem used when no config is given."""
    return ExperimentConfig(name="unit_square", geometry="unit_square_41",
                            refinement_levels=[(32, 8)], beta2_list=[100.0], variant="ideal_al")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='FD-DLM augmented Lagrangian toolkit')
    parser.add_argument('--config', help='experiment JSON document')
    parser.add_argument('--out', help='output directory (default: settings.output_dir)')
    parser.add_argument('--threads', type=int, help='parallel sweep cells')
    parser.add_argument('--seed', type=int, help='seed for random vectors in property checks')

    subparsers = parser.add_subparsers(dest='command', help='available commands')

    # 組裝命令
    assemble_parser = subparsers.add_parser('assemble', help='assemble and export all blocks')
    _add_cell_arguments(assemble_parser)

    # 求解命令
    solve_parser = subparsers.add_parser('solve', help='solve one interface problem')
    _add_cell_arguments(solve_parser)
    solve_parser.add_argument('--variant', choices=VARIANTS, help='preconditioner variant')
    solve_parser.add_argument('--save-solution', action='store_true', help='export u, u2, lambda')

    # 頻譜命令
    subparsers.add_parser('spectrum', help='preconditioned spectra (CSV + SVG)')

    # 基準測試命令
    bench_parser = subparsers.add_parser('bench', help='run the (level x beta2) sweep')
    bench_parser.add_argument('--convergence', action='store_true', help='also run the L2 convergence study')
    bench_parser.add_argument('--wallclock', action='store_true', help='also compare wall-clock times')

    # 驗證命令
    subparsers.add_parser('verify', help='PASS/FAIL checks of the spectral theory')
    return parser


def _add_cell_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument('--level', type=int, nargs=2, metavar=('BG', 'IMMERSED'),
                     help='refinement pair (default: first configured level)')
    sub.add_argument('--beta2', type=float, help='jump coefficient (default: first configured beta2)')


def main(argv: Optional[List[str]] = None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return

    try:
        cfg = load_experiment_config(args.config) if args.config else default_experiment()
        updates = {}
        if args.threads:
            updates['threads'] = args.threads
        if args.seed is not None:
            updates['seed'] = args.seed
        if updates:
            cfg = cfg.model_copy(update=updates)
        out_dir = Path(args.out or cfg.out_dir or settings.output_dir)

        if args.command == 'assemble':
            ok = assemble(cfg, out_dir, args.level, args.beta2)
        elif args.command == 'solve':
            ok = solve(cfg, out_dir, args.level, args.beta2, args.variant, args.save_solution)
        elif args.command == 'spectrum':
            ok = spectrum(cfg, out_dir)
        elif args.command == 'bench':
            ok = bench(cfg, out_dir, args.convergence, args.wallclock)
        elif args.command == 'verify':
            ok = verify(cfg)
    except Exception as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        sys.exit(1)

    if not ok:
        sys.exit(1)


def _cell(cfg: ExperimentConfig, level, beta2):
    level = tuple(level) if level else cfg.refinement_levels[0]
    beta2 = beta2 if beta2 is not None else cfg.beta2_list[0]
    return cfg.problem(level, beta2)


def assemble(cfg: ExperimentConfig, out_dir: Path, level, beta2) -> bool:
    """組裝並匯出矩陣"""
    problem = _cell(cfg, level, beta2)
    system = al_service.get_system(problem)
    paths = MatrixMarketRepository(out_dir).save_system(system)

    print("✅ System assembled!")
    print(f"📐 DoF: {system.dof_string} (total {system.size})")
    print(f"📏 h = {system.h:.4g}, h2 = {system.h2:.4g}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return True


def solve(cfg: ExperimentConfig, out_dir: Path, level, beta2, variant, save_solution: bool) -> bool:
    """求解單一介面問題"""
    problem = _cell(cfg, level, beta2)
    spec = cfg.preconditioner(variant)
    try:
        result = al_service.solve_interface_problem(problem, spec, cfg.solver())
        report = result.report
    except NonConvergence as e:
        print(f"{DAGGER} {spec.variant} did not converge: {e}")
        if e.report is not None:
            ResultRepository(out_dir).write_report(e.report, f"{cfg.name}_solve.json")
        return not cfg.fail_fatal

    ResultRepository(out_dir).write_report(report, f"{cfg.name}_solve.json")
    if save_solution:
        MatrixMarketRepository(out_dir).save_solution(result.u, result.u2, result.lam)

    print(f"✅ {spec.variant} converged in {report.iterations} iterations")
    print(f"📉 final residual: {report.final_residual:.3e} (original system {report.original_residual:.3e})")
    print(f"🔁 inner (1,1) average: {report.inner_iterations_avg:.1f} over {report.inner_solves} solves")
    print(f"⏱️  {report.wall_time:.2f}s (setup {report.setup_time:.2f}s)")
    return True


def spectrum(cfg: ExperimentConfig, out_dir: Path) -> bool:
    """計算預條件頻譜"""
    summaries = bench_service.spectrum_sweep(cfg, out_dir)

    print(f"📊 {len(summaries)} spectra written to {out_dir}")
    print("-" * 80)
    for item in summaries:
        eta = f"{item['eta']:.4f}" if item['eta'] is not None else "-"
        print(f"{item['metadata'].get('variant')}  beta2={item['metadata'].get('beta2'):g}  "
              f"gammas=({item['metadata'].get('gamma1'):g}, {item['metadata'].get('gamma2'):g})  "
              f"eta={eta}  at one={item['count_at_one']}  max|Im|={item['max_imag']:.1e}")
    return True


def bench(cfg: ExperimentConfig, out_dir: Path, convergence: bool, wallclock: bool) -> bool:
    """執行基準測試掃描"""
    run = bench_service.run_sweep(cfg)
    paths = bench_service.write_run(run, out_dir, cfg.name)
    failures = run.failures
    _print_table(run.table)

    tables = {cfg.variant: run.table}
    for variant in cfg.compare_variants:
        if variant == cfg.variant:
            continue
        other = bench_service.run_sweep(cfg, variant)
        bench_service.write_run(other, out_dir, f"{cfg.name}_{variant}")
        failures += other.failures
        tables[variant] = other.table
        merged = bench_service.merge_tables(other.table, run.table,
                                            caption=f"{variant} / {cfg.variant}")
        ResultRepository(out_dir).write_table(merged, f"{cfg.name}_{variant}_vs_{cfg.variant}.csv")
        _print_table(merged)

    if convergence:
        study = bench_service.convergence_study(cfg)
        ResultRepository(out_dir).write_report(study, f"{cfg.name}_convergence.json")
        print(f"📈 L2 differences: {', '.join(f'{d:.3e}' for d in study.l2_differences)}")
        print(f"📈 observed orders: {', '.join(f'{p:.2f}' for p in study.orders)}")
    if wallclock:
        series = bench_service.compare_wallclock(cfg, out_dir)
        for variant, points in series.items():
            print(f"⏱️  {variant}: " + ", ".join(f"{dofs}: {t:.2f}s" for dofs, t in points))

    print(f"✅ Table written to {paths['table']}")
    if failures:
        print(f"⚠️  {failures} cells did not converge ({DAGGER})")
    return not (failures and cfg.fail_fatal)


def verify(cfg: ExperimentConfig) -> bool:
    """驗證頻譜理論"""
    checks = bench_service.verify(cfg)

    for check in checks:
        status = "✅ PASS" if check.passed else "❌ FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"{status} {check.name}: {check.value:.6g} vs {check.threshold:.6g}{detail}")
    passed = sum(check.passed for check in checks)
    print(f"📊 {passed}/{len(checks)} checks passed")
    return passed == len(checks)


def _print_table(table) -> None:
    print(f"📋 {table.caption}")
    print("-" * 80)
    print(" | ".join(table.header()))
    for row in table.sorted_rows():
        print(" | ".join([row.dof_string, *row.cells, row.inner_avg]))
    print("-" * 80)


if __name__ == '__main__':
    main()
