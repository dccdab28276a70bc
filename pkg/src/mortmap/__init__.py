"""Areal mortality analysis: age standardization, Mahalanobis/Ward clustering
and spatial autocorrelation (global/local Moran's I, Getis-Ord Gi*)."""

__version__ = "0.1.0"

from .cluster import (  # noqa: E402
    ClusterSolution,
    CovarianceEstimate,
    DistanceMatrix,
    estimate_covariance,
    mahalanobis_matrix,
    silhouette_select,
    ward_cluster,
)
from .ingest import (  # noqa: E402
    DatasetManifest,
    MortalityRecord,
    apply_inclusion_rules,
    parse_wonder_export,
    read_canonical_csv,
    write_canonical_csv,
)
from .spatial_stats import (  # noqa: E402
    GlobalMoranResult,
    LocalStatResult,
    SpatialClass,
    getis_ord_gistar,
    global_moran,
    hotspot_frequency,
    local_moran,
    permutation_pvalue,
)
from .standardize import (  # noqa: E402
    AgeStratum,
    RateMatrix,
    age_adjusted_rate,
    build_rate_matrix,
    zscore_normalize,
)
from .weights import (  # noqa: E402
    NeighborGraph,
    SpatialWeights,
    queen_contiguity_from_polygons,
    read_gal,
    row_standardize,
    write_gal,
)
