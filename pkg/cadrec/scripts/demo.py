"""Minimal end-to-end demo: synthetic corpus, short training run, comparison with most-popular.

Run with:
    python -m cadrec.scripts.demo
"""

import tempfile
from pathlib import Path

from cadrec.core.config import RunConfig, SynthConfig
from cadrec.data.interactions import save_interactions
from cadrec.services.evaluation import evaluate_most_popular
from cadrec.services.pipeline import prepare_data, train
from cadrec.services.synth import generate


def main() -> None:
    with tempfile.TemporaryDirectory() as workdir:
        corpus = Path(workdir) / "interactions.tsv"
        log, _ = generate(SynthConfig(num_users=120, num_items=200, events_per_user=20, alpha_pop=1.0, seed=3))
        save_interactions(log, corpus)

        config = RunConfig(
            data_path=str(corpus),
            d_m=16,
            num_heads=2,
            epochs=8,
            batch_size=32,
            learning_rate=0.05,
            sd_gap_k=[10, 50],
            seed=3,
        )
        data = prepare_data(config)
        result = train(config, out_dir=Path(workdir) / "run", data=data, threads=1)
        baseline = evaluate_most_popular(data.split, data.pop_table, config.top_k)

        print(f"Corpus: {log.num_users} users, {log.num_items} items, {log.num_events} events\n")
        print(f"{'Epoch':<6} | {'Loss':<12} | {'val N@20':<10}")
        print("-" * 34)
        for row in result.summary.history:
            print(f"{row.epoch:<6} | {row.loss:<12.4f} | {row.val_ndcg:<10.4f}")

        report = result.summary.test_report
        print(f"\n{'K':<4} | {'model R@K':<10} | {'model N@K':<10} | {'MostPop N@K':<10}")
        print("-" * 44)
        for row in report.metrics:
            pop = baseline.metric(row.k)
            print(f"{row.k:<4} | {row.recall:<10.4f} | {row.ndcg:<10.4f} | {pop.ndcg:<10.4f}")

        print("\nEmbedding spread of most vs least popular items:")
        for diag in report.diagnostics:
            print(f"  k={diag.k:<4} sd_top={diag.sd_top:.4f} sd_bottom={diag.sd_bottom:.4f}")
        if report.pop_correlation is not None:
            print(f"  popularity/score rank correlation: {report.pop_correlation.rho:.4f}")


if __name__ == "__main__":
    main()
