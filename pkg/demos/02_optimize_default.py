"""Joint optimization of precoding, radiation and positions at the default
parameters (3 waveguides, 4 antennas each, 4 users, 5 dBW budget).

Prints the energy efficiency of the equal-power / equal-spacing start and
of the optimized design, followed by a few rows of the iteration trace.
"""
from pass_dsd import GridConfig, OptimizerConfig, SystemConfig, table_users
from pass_dsd.optimizer import run_algorithm2

cfg = SystemConfig()
sol = run_algorithm2(cfg, "stt", GridConfig(), table_users(cfg.K), OptimizerConfig())

print(f"initial EE   {sol.ee_initial / 1e6:8.2f} Mbit/J")
print(f"optimized EE {sol.ee / 1e6:8.2f} Mbit/J  (x{sol.ee / sol.ee_initial:.2f})")
print("antenna positions (m), one column per waveguide:")
print(sol.X.round(4))
print("\nouter inner  stage     EE [Mbit/J]   tx power [W]")
for row in sol.trace[:: max(1, len(sol.trace) // 8)]:
    print(f"{row['outer']:>5} {row['inner']:>5}  {row['stage']:<8} {row['ee'] / 1e6:12.3f}"
          f"   {row['tx_power']:.3e}")
