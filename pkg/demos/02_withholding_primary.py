"""A primary that certifies its rounds but keeps them to itself.

From round 3 on, the primary of cluster 1 stops forwarding certificates to
cluster 2. Cluster 2 cannot execute without them, so its replicas time out,
agree among themselves that cluster 1 is stuck, and ask cluster 1 to replace
its primary. The demo walks the trace and prints each step once.
"""

from pathlib import Path

from geobft.sim import Simulator, load_scenario

ROOT = Path(__file__).resolve().parent.parent

sc = load_scenario(ROOT / "scenarios" / "withhold_z2_n4.ini")
result = Simulator(sc, trace=True).run()

milestones = [
    ("remote_timeout", "a replica of cluster 2 gives up waiting for cluster 1"),
    ("DRVC", "cluster 2 replicas tell each other they detected the failure"),
    ("rvc_sent", "n - f detections collected: request sent to cluster 1"),
    ("rvc_honored", "cluster 1 sees f + 1 requests and accepts them"),
    ("view_change_start", "cluster 1 starts a local view change"),
    ("view_installed", "the new primary of cluster 1 takes over"),
]
seen = set()
for line in result.trace:
    for key, story in milestones:
        if key in line and key not in seen:
            seen.add(key)
            print(f"{line.split()[0]:>10} ms  {story}\n{'':>15}{line}")

withheld = range(sc.faults[0].from_round, result.rounds_executed + 1)
buffered = {
    tuple(line.split()[1:2]) + (int(line.rsplit("round=", 1)[1]),)
    for line in result.trace
    if " buffered origin=1 " in line and line.split()[1].startswith("R2.")
}
missing = [(r, k) for r in ("R2.1", "R2.2", "R2.3", "R2.4") for k in withheld if (r, k) not in buffered]
print(f"\nwithheld rounds {withheld.start}..{withheld.stop - 1} now buffered at every cluster 2 replica:",
      "yes" if not missing else f"no, missing {missing}")
print(f"run completed: {result.completed} after {result.end_time:.0f} ms")
