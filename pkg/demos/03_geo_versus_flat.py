"""GeoBFT against one PBFT instance spread over the same four regions.

Both systems get the same 28 replicas, clients and latency table. Flat PBFT
runs every phase across the wide-area links; GeoBFT keeps them inside a
region and sends only f + 1 certificates per remote cluster. This is a small
version of the benchmark, so absolute numbers are lower than in the
acceptance suite.
"""

from dataclasses import replace
from pathlib import Path

from geobft.harness import compare_modes
from geobft.sim import load_scenario

ROOT = Path(__file__).resolve().parent.parent

sc = load_scenario(ROOT / "scenarios" / "geo_z4_n7.ini")
sc = replace(sc, workload=replace(sc.workload, batches=16, depth=8))
geo, flat, cmp = compare_modes(sc)
print(f"{'':10} {'txn/s':>10} {'latency ms':>11} {'wide-area msgs':>15}")
for name, m in (("GeoBFT", geo), ("flat PBFT", flat)):
    print(f"{name:10} {m.throughput:>10.0f} {m.latency_mean_ms:>11.1f} {m.global_messages:>15.0f}")
print(f"\nthroughput ratio {cmp.throughput_ratio:.2f}, "
      f"wide-area messages per decision {cmp.geobft_global_per_decision:.1f} vs "
      f"{cmp.baseline_global_per_decision:.1f}")
