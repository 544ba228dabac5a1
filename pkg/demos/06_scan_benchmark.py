"""Wall-clock comparison of the two scan strategies.

Run from the repo root:  python3 demos/06_scan_benchmark.py
(Equivalent to the CLI: simba bench-scan --len 4096 --dim 64 --state 16)
"""

import os

from simba.bench import bench_scan, rows_to_csv

print(f"hardware threads: {os.cpu_count()}")
rows = bench_scan(4096, 64, 16, chunks=[32, 64, 128], repeats=5)
print(rows_to_csv(rows), end="")
seq = rows[0][5]
print()
for strategy, t, dp, w, chunk, ms in rows[1:]:
    print(f"chunk {chunk:>4}: {ms:7.2f} ms  ({ms / seq:.2f}x the sequential loop)")
print("\nthe chunked kernel advances blocks concurrently and stitches the")
print("carried states with one short sequential pass; on a single core the")
print("win comes from fusing the per-step arithmetic, on multicore machines")
print("the blocks genuinely run in parallel.")
