"""Benchmark isolation methods on a generated corpus."""

from __future__ import annotations

import argparse
import statistics
import sys
from dataclasses import replace
from pathlib import Path
from time import perf_counter

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from app.models import SlotGrid
from app.services.clustering import fit_clusters
from app.services.detection import ClassifierKind, CsrConfig, calibrate_threshold, classify
from app.services.generator import GeneratorConfig, generate
from app.services.isolation import IsolationConfig, IsolationMethod, isolate


def parse_args() -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(description="Benchmark beam-search, LOF and CSR isolation.")
    parser.add_argument("--houses", type=int, default=20)
    parser.add_argument("--days", type=int, default=120)
    parser.add_argument("--pricing-slots", type=int, default=24)
    parser.add_argument("--attacked-fraction", type=float, default=0.1)
    parser.add_argument("--iterations", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args()


def main() -> None:
    """Generate a corpus, flag its attacked days and time every isolator on them."""
    args = parse_args()
    grid = SlotGrid(pricing_slots=args.pricing_slots)
    cfg = replace(
        GeneratorConfig(),
        houses=args.houses,
        days=args.days,
        attacked_fraction=args.attacked_fraction,
        seed=args.seed,
    )
    corpus = generate(cfg, grid)
    model = fit_clusters(corpus.train_forecasts(), seed=args.seed)
    csr = CsrConfig(k=model.k)
    csr = csr.with_threshold(calibrate_threshold(corpus.train_forecasts(), model, csr))

    flagged = []
    for day in corpus.test:
        if not day.is_attacked:
            continue
        report = classify(day.received, model, csr, ClassifierKind.CSR)
        if report.is_attacked:
            flagged.append((day, report))

    iso_cfg = IsolationConfig(seed=args.seed)
    rows: list[dict[str, str]] = []
    for method in IsolationMethod:
        timings = []
        hits = 0
        for _ in range(args.iterations):
            hits = 0
            started = perf_counter()
            for day, report in flagged:
                verdict = isolate(method, day.received, report, model, iso_cfg)
                hits += set(verdict.attacked_slots) == set(day.planted)
            timings.append(perf_counter() - started)
        median_s = float(statistics.median(timings))
        rows.append({
            "isolator": str(method),
            "cases": str(len(flagged)),
            "exact": str(hits),
            "recall": f"{hits / len(flagged):.3f}" if flagged else "-",
            "median_s": f"{median_s:.4f}",
            "ms_per_case": f"{median_s / len(flagged) * 1000:.2f}" if flagged else "-",
        })

    headers = ("isolator", "cases", "exact", "recall", "median_s", "ms_per_case")
    widths = {header: max(len(header), *(len(row[header]) for row in rows)) for header in headers}

    print("Isolation benchmark")
    print(
        f"Corpus: {args.houses} houses, {args.days} days, {grid.pricing_slots} pricing slots, "
        f"{len(corpus.attacked_days)} attacked, {len(flagged)} flagged"
    )
    print(f"Iterations: {args.iterations}")
    print()
    print(" ".join(header.ljust(widths[header]) for header in headers))
    print(" ".join("-" * widths[header] for header in headers))
    for row in rows:
        print(" ".join(row[header].ljust(widths[header]) for header in headers))


if __name__ == "__main__":
    main()
