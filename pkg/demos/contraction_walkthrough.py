"""Walk through one tensor kernel on one 3x3 patch.

Run: python demos/contraction_walkthrough.py
"""
import numpy as np

from tacnn import tensor_core as tc
from tacnn.oracle import brute_force_contract

rng = np.random.default_rng(7)

# Two pixels first, small enough to check by hand.
patch = tc.PatchState.from_pixels([0.5, 0.25])
kernel = tc.TensorKernel(np.array([1.0, 2.0, 3.0, 4.0]))
print("local states:\n", patch.locals)
for index in range(4):
    bits = tc.config_bits(index, 2)
    print(f"  s={bits}  weight={tc.basis_weight(patch, bits):.4f}  coefficient={kernel.coefficients[index]}")
print("contract:", tc.contract(patch, kernel), " enumeration:", brute_force_contract(patch, kernel))
print("d/dpixel:", tc.grad_pixels(patch, kernel))

# A full 3x3 window: 512 coefficients, the weights still sum to one,
# so the output never leaves [min c, max c].
pixels = rng.random(9)
patch = tc.PatchState.from_pixels(pixels)
kernel = tc.TensorKernel(rng.standard_normal(512))
weights = tc.grad_coefficients(patch)
y = tc.contract(patch, kernel)
print(f"\n3x3 patch: sum of weights {weights.sum():.15f}")
print(f"output {y:.6f} inside [{kernel.coefficients.min():.3f}, {kernel.coefficients.max():.3f}]")
print(f"fast vs enumeration: {abs(y - brute_force_contract(patch, kernel)):.1e}")

# Affine in each pixel on its own: the midpoint lands halfway.
ends = []
for v in (0.0, 0.5, 1.0):
    pixels[4] = v
    ends.append(tc.contract(tc.PatchState.from_pixels(pixels), kernel))
print(f"centre pixel 0 / 0.5 / 1 -> {ends[0]:.5f} / {ends[1]:.5f} / {ends[2]:.5f}")

# Many patches at once go through the column layout.
cols = rng.random((9, 1000))
coeffs = rng.standard_normal((4, 512))
out = tc.contract_columns(cols, coeffs)
print("\nbatched output shape", out.shape)
