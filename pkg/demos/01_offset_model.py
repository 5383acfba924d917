"""Where inside a 64-byte line does a fused cmp/jcc pair lose its fast path?

Run with ``python3 demos/01_offset_model.py``.
"""
from fractions import Fraction

import numpy as np

from jccscan import builtin_profile, probability_bounds, slow_offsets
from jccscan.placement import PlacementClass

profile = builtin_profile("skylake_family")

# %% A 4-byte sub followed by a 2-byte jnz, the loop body used by the benchmark.
res = slow_offsets(4, 2, profile)
print("noMFuse offsets :", sorted(res.no_mfuse_offsets))
print("noUCache offsets:", sorted(res.no_ucache_offsets))

# %% Draw the line as a strip: '.' fast, 'u' no uop cache, 'M' no macro-fusion.
glyph = {PlacementClass.FAST: ".", PlacementClass.NO_UCACHE: "u", PlacementClass.NO_MFUSE: "M"}
strip = "".join(glyph[res.bucket(o)] for o in range(64))
print("offset  0" + " " * 22 + "31" + " " * 30 + "63")
print("        " + strip)

# %% The slow set grows linearly with pair length p: 2p-3 uop-cache misses, one fusion miss.
lengths = np.arange(2, 33)
counts = np.array([len(slow_offsets(1, p - 1).no_ucache_offsets) for p in lengths])
assert np.array_equal(counts, 2 * lengths - 3)
for p, c in zip(lengths[::5], counts[::5]):
    print(f"p={p:2d}  noUCache {c:2d}/64  = {Fraction(int(c), 64)}")

# %% Real code mixes pair lengths.  With p between 5 and 12 the odds bracket as follows.
lo, hi = probability_bounds(5, 12)
print(f"noUCache probability for p in [5, 12]: {float(lo):.4%} .. {float(hi):.4%}")
