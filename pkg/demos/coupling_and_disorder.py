# coding: utf-8

# # Couplings mediated by a multimode cavity
#
# A confocal-like 4/7 cavity supports a family of degenerate transverse modes.
# Atoms placed in the midplane exchange photons through that family, which
# produces a position-dependent interaction with both signs. This script
# builds the coupling matrix for a fixed 16-site layout, looks at its
# spectrum, and then asks how quickly a random layout becomes glassy.

# %%

import numpy as np

from glasscav.cavity_optics import CavityGeometry, greens_47_nonlocal, local_weight
from glasscav.coupling import PhysicalParams, assemble_J, critical_pump, j1_fixture
from glasscav.randmat import sweep_w

geom = CavityGeometry()
print(f"waist {geom.w0} um, free spectral range {geom.fsr / 1e9:.2f} GHz")

# %% [markdown]
# The nonlocal part of the Green's function is a smooth, sign-changing kernel.
# At the cavity axis it takes a closed-form value.

# %%

print("G(0, 0)        =", greens_47_nonlocal([0.0, 0.0], [0.0, 0.0], geom))
print("G(w0, 0)       =", greens_47_nonlocal([geom.w0, 0.0], [0.0, 0.0], geom))
print("contact weight =", local_weight(geom), "um^2")

# %% [markdown]
# Integrating the kernel against Gaussian atom clouds gives the coupling
# matrix. Its largest eigenvalue sets the pump power at which the spins order.

# %%

Jm = assemble_J(j1_fixture())
off = Jm.J[~np.eye(Jm.n, dtype=bool)]
print(f"n = {Jm.n}, fraction of negative bonds {np.mean(off < 0):.2f}")
print(f"lambda_max = {Jm.lambda_max:.4f}")
omega_c = np.sqrt(critical_pump(Jm, PhysicalParams()))
print(f"critical pump Rabi frequency {omega_c / (2 * np.pi * 1e6):.1f} MHz")

# %% [markdown]
# Spreading point-like sites over a wider region makes the bond signs random.
# Past about two waists the spectrum approaches the semicircle and half of
# all bonds and triples become frustrated.

# %%

res = sweep_w([16], [0.25, 0.5, 1.0, 2.5], draws=500, seed=0)
for w in res.w_values:
    c = res.cell(16, w)
    print(f"w = {w:4.2f} w0   Hellinger {c['hellinger']:.3f}   P(J<0) {c['p_neg']:.3f}   "
          f"P(frustrated) {c['p_frustrated_triple']:.3f}")
