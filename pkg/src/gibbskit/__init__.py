"""Random-scan Gibbs samplers for log-concave targets, with exact Gaussian
calculus and a harness that checks their entropy-contraction guarantees."""

from .errors import (
    BracketError,
    ConditionalSamplingError,
    ConfigError,
    ConstructionError,
    DimensionError,
    DomainError,
    GibbsKitError,
    HullViolationError,
    InputError,
    ModeError,
    NumericalError,
    UnsupportedError,
)
from .targets import (
    BlockStructure,
    CompositeTarget,
    ConditionNumbers,
    GaussianTarget,
    RidgeTarget,
    condition_numbers_gaussian,
    equicorrelated_precision,
    load_target,
    logcosh_target_1d,
    paired_precision,
    random_precision,
    save_target,
)
from .gaussian import (
    GaussianLaw,
    GaussianMixture,
    amit_gap,
    block_update_law,
    gs_one_step_law,
    kl_gaussian,
)
from .samplers import (
    KERNELS,
    ChainState,
    MwGConfig,
    StiefelFrame,
    gs_ell_step,
    gs_step,
    hr_ell_step,
    mwg_step,
    run_chain,
)
from .ars import Envelope, ars_sample
from .transport import AffineTriangularMap, kr_map_gaussian, kr_map_grid_2d
from .kernels import BACKEND
from .rng import substream

__version__ = "0.1.0"
