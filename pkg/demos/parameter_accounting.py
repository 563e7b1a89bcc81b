"""Parameter totals for the kernel-count sweep, TACNN against the baseline CNN.

Run: python demos/parameter_accounting.py
"""
from tacnn.layers import cnn_spec, parameter_count, tacnn_spec

print(f"{'kernels':>8} {'tacnn':>12} {'cnn':>12} {'tensor share':>13}")
for m in range(12):
    k = 2 ** m
    t = parameter_count(tacnn_spec((k,)))
    c = parameter_count(cnn_spec((k,)))
    print(f"{k:>8} {t.total:>12,} {c.total:>12,} {t.conv / t.total:>12.1%}")

print("\ntwo tensor layers")
for n in (16, 32, 64):
    count = parameter_count(tacnn_spec((n, n)))
    for name, size in count.per_layer:
        if size:
            print(f"  {n}x{n}  {name:<40s} {size:>10,}")
    print(f"  {n}x{n}  total {count.total:,}")
