"""
Running the command line
========================

Every run reads one YAML scenario file and writes CSV tables, a copy of the
resolved config and a manifest with output hashes. This demo drives the three
verbs on the configs in demos/configs and prints what came out.
"""

import pathlib
import tempfile

from multidefault.cli import main

here = pathlib.Path(__file__).parent / "configs"
out = pathlib.Path(tempfile.mkdtemp(prefix="multidefault-"))

runs = [("simulate", "simulate.yaml", []), ("price", "price.yaml", []),
        ("verify", "verify_dpp.yaml", []), ("verify", "verify_dpp.yaml", ["--verify-kind", "commutation"]),
        ("verify", "verify_tower.yaml", []), ("verify", "verify_oracle.yaml", [])]
for j, (cmd, cfg, extra) in enumerate(runs):
    d = out / f"{j}_{cmd}"
    code = main([cmd, "--config", str(here / cfg), "--out", str(d), *extra])
    print(f"{cmd} {cfg} {' '.join(extra)} -> exit {code}")
    for f in sorted(d.glob("*.csv")):
        lines = f.read_text().splitlines()
        print(f"  {f.name}: {len(lines) - 1} rows")
        for line in lines[: 4 if f.name != "scenarios.csv" else 2]:
            print("   ", line)
print("outputs in", out)
