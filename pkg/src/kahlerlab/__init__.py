"""Numerical laboratory for the Bergman-kernel iteration towards Kähler-Einstein
metrics on discs and families of discs."""

__version__ = "0.1.0"

from .asymptotics import (ExpansionReport, LaplaceJet, expansion_check, jet_from_callables,
                          laplace_expand, laplace_l1, laplace_oracle)
from .bergman import (MomentSequence, WeightedSpace, bergman_function, compute_moments,
                      extremal_check, gram_oracle, kernel_eval, measure_density)
from .chart import BoundedGeometryParams, ChartJet, normalize_chart, prenormalize
from .errors import *  # noqa: F401,F403
from .geometry import (MAInstance, RadialPotential, kahler_density, manufacture_instance,
                       poincare_instance, ricci_scalar)
from .iteration import (DkSchedule, IterationTrace, beta_k, d_k, iterate, lemma_key_check,
                        rate_fit)
from .numerics import QuadratureSpec, RadialGrid, integrate_disc
from .variation import (DiscFamily, LeviReport, fiber_uniform_bound_check, glued_ke_potential,
                        levi_form_fd, psh_scan, relative_bergman_log)
