"""Conformal calibration of nucleus (top-p) sampling.

Fits conformal thresholds (globally or per entropy bin) from observed
next-token distributions so a confidence-p prediction set contains the gold
token with probability p, and provides the entropy-adaptive decoder plus the
evaluation harness that verifies the guarantee.
"""

from .records import (DenseBody, Dataset, DistributionRecord, RecordStats,
                      SparseBody, dense_record, entropy, read_dataset,
                      record_stats, sparse_record, validate_record,
                      write_dataset)
from .conformal import (CalibrationModel, ScoredRecord, aps_score, aps_scores,
                        bin_of, conformal_quantile, fit_binned, fit_global,
                        load_model, save_model)
from .decoding import (DecodeStep, PredictionSet, conformal_decode_step,
                       prediction_set, sample_from_set, vanilla_top_k_step,
                       vanilla_top_p_step)
from .evaluation import (BandCheckResult, CoverageReport, CurvePoint,
                         effective_confidence_curve, empirical_coverage,
                         qhat_curve, theorem_band_check)
from .synth import (SynthSpec, gen_dirichlet_world, gen_markov_world,
                    gen_markov_world_from_matrix, subsample_one_per_sequence)

__version__ = "0.1.0"
