"""Two-sample testing with Self-Organizing Maps, plus ML-based baseline tests."""

from .som import (
    CountGrid,
    MapGeometry,
    SomModel,
    TrainSchedule,
    bmu,
    bmus,
    deserialize,
    init_map,
    project_counts,
    serialize,
    train,
)
from .stats import NullDescriptor, chi2_sf, normal_sf, permutation_pvalue
from .two_sample import (
    METHODS,
    TestResult,
    c2st_test,
    chi2_from_counts,
    knn_coincidence_test,
    mmd_block_test,
    relative_difference,
    run_test,
    som_two_sample_test,
)

__version__ = "0.1.0"
