"""InfoMeter: mutual information between two sources from learned entropy models.

The estimate is ``H(X) + H(Y) - H(X,Y)``, each entropy measured as the
cross-entropy of an integer lifting transform's coefficients under a trained
entropy model.
"""

__version__ = "0.1.0"

from .adapt import AffineRecord, AdaptedMap, JointMap, concat_quilt, concat_tile, dataset_stats, rescale_quantize
from .entropy import (
    ARContextModel,
    BranchModel,
    EntropyEstimate,
    FactorizedModel,
    TrainConfig,
    estimate_entropy,
    nll_bits,
    train_branch,
)
from .meter import Branches, InfoMeterConfig, MIEstimate, compare_runs, estimate_mi, fit_infometer
from .sources import (
    Dataset,
    gen_discrete_iid,
    gen_gaussian_pair,
    gen_identical,
    gen_independent,
    load_dataset,
    save_dataset,
)
from .transform import LiftingTransform
