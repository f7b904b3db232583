"""Deployment protocols against conventional arrays.

Each protocol (slide/tune combinations) is optimized at 5 dBW and compared
with a co-located MIMO array and a cell-free layout that use the same
budget and precoding loop.
"""
from pass_dsd import GridConfig, OptimizerConfig, SystemConfig, table_users
from pass_dsd.baselines import BaselineLayout, evaluate_baseline_ee
from pass_dsd.optimizer import run_algorithm2

cfg = SystemConfig()
users = table_users(cfg.K)
opt = OptimizerConfig()

rows = []
for proto in ("stt", "sta", "sat", "saa"):
    grid = GridConfig(N_C=2) if proto == "sat" else GridConfig()
    rows.append((f"PASS/{proto}", run_algorithm2(cfg, proto, grid, users, opt).ee))
for kind in ("mimo", "cellfree"):
    rows.append((kind, evaluate_baseline_ee(BaselineLayout.for_config(kind, cfg), users, cfg, opt)))

for name, ee in rows:
    print(f"{name:<10} {ee / 1e6:8.2f} Mbit/J")
