"""End-to-end file flow: engine outputs in, figures out.

Drives the two console scripts the way a batch job would: simulate and
sweep into an output directory, then render every figure kind from the
files alone.  Nothing here imports the simulation package; the file
schemas are the whole interface.
"""
import subprocess
import sys
from pathlib import Path

OUT = Path(__file__).parent / "output"


def sh(*argv):
    print("$", " ".join(argv))
    subprocess.run(argv, check=True)


sh(sys.executable, "-m", "sinebeta.cli", "simulate",
   "--out", str(OUT / "run"), "--x", "16", "--replicas", "60", "--seed", "5",
   "--config", str(Path(__file__).parent / "figures_run.json"))
sh(sys.executable, "-m", "sinebeta.cli", "max-scaling",
   "--out", str(OUT / "sweep"), "--x-list", "16,32,64,128", "--replicas", "40",
   "--seed", "6")
sh(sys.executable, "-m", "sinebeta.cli", "gaussian",
   "--out", str(OUT / "gaussian"), "--x", "16", "--replicas", "150", "--seed", "7")

sh(sys.executable, "-m", "sineplots.cli", "plot", "scaling",
   "--in", str(OUT / "sweep"), "--out", str(OUT / "fig_scaling.svg"))
sh(sys.executable, "-m", "sineplots.cli", "plot", "covariance",
   "--in", str(OUT / "run"), "--out", str(OUT / "fig_covariance.svg"))
sh(sys.executable, "-m", "sineplots.cli", "plot", "tails",
   "--in", str(OUT / "run"), "--out", str(OUT / "fig_tails.svg"))
sh(sys.executable, "-m", "sineplots.cli", "plot", "gaussian",
   "--in", str(OUT / "gaussian"), "--out", str(OUT / "fig_gaussian.svg"))

print()
print("figures under", OUT)
for p in sorted(OUT.glob("fig_*.svg")):
    print(" ", p.name, f"({p.stat().st_size} bytes)")
