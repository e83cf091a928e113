# coding: utf-8

# # Replicas, overlaps and the Parisi function
#
# A replica is one run of the pump ramp on the same disorder. Repeating the
# run many times and comparing the final spin states reveals whether the
# system always lands in the same state (up to a global flip) or samples
# many. This script runs two ramp speeds on the 16-site layout and walks
# through the glass diagnostics.

# %%

import numpy as np

from glasscav.coupling import PhysicalParams, assemble_J, j1_fixture
from glasscav.glass_analysis import (
    cluster_replicas,
    k_correlator,
    magnetization_stats,
    overlap_distribution,
    overlap_matrix,
    parisi_function,
    shannon_entropy_jackknife,
)
from glasscav.replica_dynamics import generate_ensemble, ramp_schedule

Jm = assemble_J(j1_fixture())
phys = PhysicalParams()

# %% [markdown]
# A fast ramp freezes the spins before the couplings can order them; a slow
# ramp lets the system settle into low-energy states.

# %%

ensembles = {}
for t_ms in (0.1, 10.0):
    ensembles[t_ms] = generate_ensemble(Jm, phys, ramp_schedule(t_ms * 1e-3, 300e-6),
                                        n_reps=100, threads=4)
    print(f"t_R = {t_ms:5.1f} ms: {ensembles[t_ms].n_reps} replicas")

# %% [markdown]
# The overlap q between two replicas is the dot product of their normalized
# spin vectors. Identical or flipped states give |q| = 1; unrelated ones
# scatter around zero.

# %%

for t_ms, ens in ensembles.items():
    Q = overlap_matrix(ens)
    q = np.abs(Q[np.triu_indices(ens.n_reps, 1)])
    h = overlap_distribution(Q)
    peak = h.bin_centers[np.argmax(h.probabilities)]
    print(f"t_R = {t_ms:5.1f} ms: mean |q| {q.mean():.2f}, mass above 0.8 {np.mean(q > 0.8):.2f}, "
          f"histogram peak at q = {peak:+.2f}")

# %% [markdown]
# The Parisi function q(x) inverts the cumulative distribution of |q|. A
# flat q(x) means a single state; a rising one means many.

# %%

res = parisi_function(overlap_distribution(overlap_matrix(ensembles[10.0])))
print(f"q_EA = {res.fit.q_EA:.3f}, breakpoint x* = {res.fit.x_star:.3f}")

# %% [markdown]
# Ultrametricity asks whether distances between three states always form an
# isosceles triangle with a short base. The K correlator is zero for a
# perfect hierarchy and large for random states.

# %%

for t_ms, ens in ensembles.items():
    k = k_correlator(overlap_matrix(ens))
    d = cluster_replicas(overlap_matrix(ens))
    print(f"t_R = {t_ms:5.1f} ms: <K> {k.mean:.3f}, FWHM {k.fwhm:.3f}, tree depth {d.depth(3)}")

# %% [markdown]
# Finally, the entropy of the sign patterns counts how many states are
# visited, and the magnetization checks that neither global sign is favored.

# %%

for t_ms, ens in ensembles.items():
    h = shannon_entropy_jackknife(ens)
    m = magnetization_stats(ens)
    print(f"t_R = {t_ms:5.1f} ms: entropy {h.jackknife:.2f} bits, <m> = {m.mean:+.3f} +- {m.stderr:.3f}")
