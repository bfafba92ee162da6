"""curvtrap: field solver and shape optimization for planar ion traps
with curved rf electrodes.

The package models surface-electrode traps in the gapless plane
approximation, locates and traces rf pseudo-potential minimum paths,
optimizes transition-zone electrode boundaries, predicts coupling and
micromotion figures, and solves dc voltage sets for confinement,
compensation, and shuttling.
"""

__version__ = "0.1.0"

from .constants import j_to_mev, mev_to_j
from .geometry import (LayoutParams, PolygonElectrode, SplineBoundary,
                       TrapLayout, build_layout, export_layout, import_layout)
from .kernel import PolygonSet, basis_field, basis_hessian, basis_potential
from .minpath import (CrossSectionMinima, RfMinimumPath, find_minima,
                      path_metrics, trace_path)
from .model import (CA40, Drive, FieldSample, IonSpecies, PseudoModel,
                    dc_potential, pseudo_potential, total_modes)

__all__ = [
    "__version__",
    "LayoutParams", "PolygonElectrode", "SplineBoundary", "TrapLayout",
    "build_layout", "export_layout", "import_layout",
    "PolygonSet", "basis_potential", "basis_field", "basis_hessian",
    "CA40", "Drive", "FieldSample", "IonSpecies", "PseudoModel",
    "pseudo_potential", "dc_potential", "total_modes",
    "CrossSectionMinima", "RfMinimumPath", "find_minima", "trace_path",
    "path_metrics", "j_to_mev", "mev_to_j",
]
