"""Generate the offset-shifted loop, then check each variant against the offset model.

Run with ``python3 demos/03_benchmark.py``.  If GNU ``as`` is on PATH the
assembly variant is also assembled to confirm the label offset.
"""
import os
import shutil
import subprocess
import tempfile

from jccscan import builtin_profile, classify, decode_stream, find_adjacent_pairs, slow_offsets
from jccscan.benchgen import BenchSpec, emit_assembly, emit_loop_bytes
from jccscan.loader import CodeSection

profile = builtin_profile("skylake_family")
model = slow_offsets(4, 2, profile)

# %% Sweep the nop sled length B.  The sub lands at (B + 7) mod 64 past a line start.
rows = []
for b in range(64):
    spec = BenchSpec(b, iterations=1000)
    section = CodeSection(".text", 0x401000, emit_loop_bytes(spec))
    (pair,) = find_adjacent_pairs(decode_stream(section))
    got = classify(profile, pair)
    assert got is model.bucket(spec.sub_index % 64)
    if got.value != "fast":
        rows.append((b, spec.sub_index % 64, got.value))
print("B   sub offset  class")
for b, off, cls in rows:
    print(f"{b:<3d} {off:<11d} {cls}")

# %% The assembly version carries the PAPI scaffolding as comments.
text = emit_assembly(BenchSpec(53))
print("\n".join(text.splitlines()[:12]), "\n...")

if shutil.which("as") and shutil.which("objdump"):
    with tempfile.TemporaryDirectory() as tmp:
        src, obj = os.path.join(tmp, "b.s"), os.path.join(tmp, "b.o")
        with open(src, "w") as fh:
            fh.write(emit_assembly(BenchSpec(53, instrument=False)))
        subprocess.run(["as", "-o", obj, src], check=True)
        dump = subprocess.run(["objdump", "-d", "-M", "intel", obj], capture_output=True, text=True).stdout
        (line,) = [ln for ln in dump.splitlines() if "sub " in ln and "rcx" in ln]
        addr = int(line.split(":")[0], 16)
        print(f"assembled: sub rcx at {addr:#x}, line offset {addr % 64}")
