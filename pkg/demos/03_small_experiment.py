"""A small Monte-Carlo experiment driven by an INI config.

Run:  python3 demos/03_small_experiment.py [output_dir]

Same thing as ``python3 -m gmconsensus run --config <file>``, but the
config lives in this script.  Five runs are enough to see the ordering;
the acceptance suite uses fifty.
"""
import sys

from gmconsensus import emit_reports, parse_config, run_experiment

CONFIG = """
[experiment]
scenario = single
steps = 100
runs = 5
seed = 2024

[network]
topology = ring
nodes = 4

[protocols]
names = CGMM, CGMA, GCI, CCA
t = 0, 1, 2
"""

out = sys.argv[1] if len(sys.argv) > 1 else "demo_results"
table = run_experiment(parse_config(CONFIG, env={}))
emit_reports(table, out)
print(open(f"{out}/summary.txt").read())
