"""Desk-scale benchmark: full model vs single ablations vs most-popular, averaged over seeds.

Run with:
    python -m cadrec.scripts.benchmark                       # synthetic planted-bias corpus
    python -m cadrec.scripts.benchmark --data u.data --columns 0,1,3
"""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from cadrec.core.config import RunConfig, SynthConfig, settings
from cadrec.data.interactions import save_interactions
from cadrec.services.evaluation import evaluate_most_popular
from cadrec.services.pipeline import prepare_data, run_ablations
from cadrec.services.synth import generate

ABLATION_RUNS = ["no_sa", "no_dis", "no_er", "no_ws"]


def synthetic_corpus(workdir: Path, seed: int) -> Path:
    """Planted popularity (alpha_pop=2) and individual offsets (sigma_indi=1)."""
    path = workdir / f"synth_{seed}.tsv"
    log, _ = generate(
        SynthConfig(num_users=500, num_items=1000, alpha_pop=2.0, sigma_indi=1.0, events_per_user=30, seed=seed)
    )
    save_interactions(log, path)
    return path


def run_benchmark(data_path: str | None, columns: str, seeds: list[int], epochs: int, threads: int):
    rows: dict[str, list[tuple[float, float, float]]] = {}
    with tempfile.TemporaryDirectory() as workdir:
        for seed in seeds:
            path = data_path or str(synthetic_corpus(Path(workdir), seed))
            config = RunConfig(data_path=path, columns=columns, epochs=epochs, seed=seed, sd_gap_k=[50])
            data = prepare_data(config)

            start = time.perf_counter()
            results = run_ablations(config, ABLATION_RUNS, data=data, threads=threads)
            elapsed = time.perf_counter() - start

            for name, result in results.items():
                report = result.summary.test_report
                rho = report.pop_correlation.rho if report.pop_correlation else 0.0
                gap = report.diagnostics[0].ratio if report.diagnostics else float("nan")
                rows.setdefault(name, []).append((report.metric(20).ndcg, rho, gap))
            pop = evaluate_most_popular(data.split, data.pop_table, config.top_k)
            rows.setdefault("most_pop", []).append((pop.metric(20).ndcg, float("nan"), float("nan")))
            print(f"seed {seed}: {len(results)} runs in {elapsed:.1f}s")

    print(f"\n{'Run':<10} | {'N@20':<8} | {'pop rho':<8} | {'sd gap@50':<9}")
    print("-" * 44)
    for name, values in rows.items():
        ndcg, rho, gap = np.nanmean(np.array(values), axis=0) if values else (0.0, 0.0, 0.0)
        print(f"{name:<10} | {ndcg:<8.4f} | {rho:<8.4f} | {gap:<9.4f}")

    full = np.mean([v[0] for v in rows["full"]])
    baseline = np.mean([v[0] for v in rows["most_pop"]])
    lift = (full - baseline) / baseline if baseline > 0 else float("inf")
    print("-" * 44)
    print(f"Relative N@20 lift over most-popular: {lift:+.1%}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", help="interaction file; synthetic corpora when omitted")
    parser.add_argument("--columns", default="0,1,2")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--threads", type=int, default=settings.threads)
    args = parser.parse_args()
    run_benchmark(args.data, args.columns, args.seeds, args.epochs, args.threads)


if __name__ == "__main__":
    main()
