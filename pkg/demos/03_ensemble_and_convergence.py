# %% [markdown]
# # Ensembles and coupled refinement
#
# Statistical checks need many paths.  A small ensemble already shows the
# martingale verdicts; a coupled refinement study shows the splitting error
# shrinking as the interval count grows.

# %%
from dataclasses import replace

from stfe import SplitSchedule, StoStepConfig, refine_study
from stfe.config import reference_config
from stfe.ensemble import EnsembleConfig, run_ensemble

cfg = reference_config()
u0 = cfg.u0()

# %%
stats = run_ensemble(u0, cfg.schedule, cfg.model, EnsembleConfig(n_paths=32, seed=5, workers=2))
for v in stats.verdicts:
    print(f"{v.phi}: {'PASS' if v.passed else 'FAIL'}  worst z mean {v.worst_mean_z:.2f}, square {v.worst_square_z:.2f}")
print("global minimum over all paths and inner steps:", stats.global_min)

# %% [markdown]
# Coupling: every refinement of a path consumes the same Brownian path,
# drawn on the least common multiple of the substep lattices.

# %%
base = replace(cfg.schedule, sto=StoStepConfig())
table = refine_study(u0, cfg.model, cfg.schedule.T, (4, 8, 16), seed=9, schedule=base, path_ids=(0, 1))
for N, N_next, diff, _ in table.rows():
    print(f"N={N:>2} -> {N_next:>2}: ||u_N(T) - u_next(T)|| = {diff}")
print("strictly decreasing on every path:", bool(table.decreasing().all()))
