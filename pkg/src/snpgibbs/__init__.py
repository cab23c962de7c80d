"""snpgibbs: SNP effect estimation under missing genotypes.

A Gibbs sampler for the linear mixed model Y = X beta + Z gamma + eps
with pedigree-based residual correlation, multiple imputation of missing
genotypes inside the chain, Bayes-factor-driven model search, rank-one
inverse updating for the per-sweep covariance, and an EM baseline.
"""

__version__ = "0.1.0"

from .gibbs import (
    CredibleInterval,
    GibbsConfig,
    ParameterState,
    PosteriorSamples,
    hpd_interval,
    run_chain,
)
from .model import (
    Dataset,
    FamilyDesign,
    GenotypeMatrix,
    ImputationPrior,
    PhenotypeVector,
    PriorHyperparams,
    default_priors,
    encode_genotypes,
    validate_dataset,
)
from .pedigree import (
    OrderedPedigree,
    PedigreeRecord,
    RelationshipMatrix,
    build_numerator_matrix,
    extract_submatrix,
    order_pedigree,
)
from .selector import (
    BayesFactorEstimate,
    ModelIndicator,
    SearchConfig,
    SearchTrace,
    estimate_bayes_factor,
    exhaustive_search,
    mh_model_search,
)

__all__ = [
    "__version__",
    "CredibleInterval",
    "GibbsConfig",
    "ParameterState",
    "PosteriorSamples",
    "hpd_interval",
    "run_chain",
    "Dataset",
    "FamilyDesign",
    "GenotypeMatrix",
    "ImputationPrior",
    "PhenotypeVector",
    "PriorHyperparams",
    "default_priors",
    "encode_genotypes",
    "validate_dataset",
    "OrderedPedigree",
    "PedigreeRecord",
    "RelationshipMatrix",
    "build_numerator_matrix",
    "extract_submatrix",
    "order_pedigree",
    "BayesFactorEstimate",
    "ModelIndicator",
    "SearchConfig",
    "SearchTrace",
    "estimate_bayes_factor",
    "exhaustive_search",
    "mh_model_search",
]
