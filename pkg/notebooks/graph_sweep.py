"""MSE, bias and variance across n on the Graph domain, for two ratio sources.

Runs the shipped ``graph`` preset with the fitted-model ratio and with
the exact oracle ratio, then prints the MSE curve for each batch size.
Run with ``python3 notebooks/graph_sweep.py``; writes SVGs to the cwd.
"""
from sope.config import parse_config
from sope.harness import emit_svg, run_sweep

for method in ("model-based", "minmax-tabular", "oracle"):
    config = parse_config("graph", ["families=['SOPE']", f"ratio.method='{method}'"])
    report = run_sweep(config)
    emit_svg(report, f"graph-sweep-{method}.svg")
    L = config.resolved_horizon
    print(f"\nratio = {method}, J(pi_e) = {report.true_j:.5f}")
    for b in config.batch_sizes:
        cells = {a.n: a for a in report.aggregates if a.batch_size == b}
        best = min(cells, key=lambda n: cells[n].mse)
        curve = " ".join(f"{cells[n].mse:.3g}" for n in range(0, L + 1, 4))
        print(f"  batch {b:4d}: argmin n = {best:2d}; MSE at n=0,4,..,{L}: {curve}")
