"""Design-based estimation and inference for spillover effects in network
experiments where units and network links are themselves sampled.

The package covers the full workflow: network ingestion and distance indexing
(:mod:`~spillnet.graph`), sampling and assignment draws (:mod:`~spillnet.design`),
exposure mappings with exact conditional expectations (:mod:`~spillnet.exposure`),
residualized least squares with population- and sample-level effect targets and
contamination decompositions (:mod:`~spillnet.estimator`), conservative
network-robust variance estimation (:mod:`~spillnet.variance`), and a
reproducible replication harness (:mod:`~spillnet.montecarlo`).
"""

__version__ = "0.1.0"

from .design import DesignSpec, Draw, draw_sample, rng_for, sampled_distances
from .errors import NumericalError, SingularMatrixError, SpillnetError, UserInputError
from .estimator import (Dataset, DgpTruth, EstimationResult, contamination_weights,
                        gamma_tilde, ols_fit, population_estimand, residualize,
                        sample_estimand)
from .exposure import (CensorAware, ExposureSpec, InteractionOwnTimesShare,
                       OwnTreatment, SecondNeighborShare, TreatedFriendsAny,
                       TreatedFriendsCount, TreatedFriendsShare,
                       compute_exposure, conditional_expectation,
                       dependency_radius, overlap_diagnostic)
from .graph import (Network, NeighborhoodIndex, PopulationGraph, build_index,
                    load_edge_list, network_summary, sparsity_diagnostics)
from .montecarlo import (SimulationConfig, SimulationReport, clustering_coefficient,
                         generate_dgp, run_simulation, synthetic_village_graph)
from .variance import (HacSpec, VarianceResult, clip_diagnostics, eigen_clip,
                       estimate_variance, hac_kernel, hac_sigma, sandwich,
                       score_vectors)

__all__ = [name for name in dir() if not name.startswith("_")]
