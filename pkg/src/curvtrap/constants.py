"""Physical constants (CODATA 2018) and unit helpers.

All internal math is SI; micrometers and meV appear only at interfaces.
"""

ELEMENTARY_CHARGE = 1.602176634e-19  # C, exact
EPSILON_0 = 8.8541878128e-12         # F/m
ATOMIC_MASS = 1.66053906660e-27      # kg
CA40_MASS_U = 39.962590850           # u, 40Ca

MEV_TO_J = 1.602176634e-22           # J per meV
UM = 1e-6                            # m per um


def j_to_mev(energy):
    return energy / MEV_TO_J


def mev_to_j(energy_mev):
    return energy_mev * MEV_TO_J
