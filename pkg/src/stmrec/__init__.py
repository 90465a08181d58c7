"""Sparse topic model recommenders.

Joint sparse dictionary learning over item content combined with
L1-regularized collaborative filtering, a social-graph extension, the
classic factorization baselines, and rank-based evaluation utilities.
"""

from .data import (Dataset, FeatureMatrix, GroupMembership, Hyperparams,
                   ParseError, RatingMatrix, SchemaError, SocialGraph,
                   SplitMasks, block_split, full_train_masks, ingest_dataset,
                   social_similarity_from_groups, subset_items,
                   tag_similarity, write_dataset)
from .l1qp import (L1QP, L1QPSolution, SolverError, kkt_residual,
                   solve_coordinate_descent, solve_feature_sign)
from .dictionary import (DualAscentError, TopicDictionary, revive_dead_atoms,
                         update_dictionary)
from .stm import (STMState, TrainingError, assemble_item_subproblem,
                  assemble_user_subproblem, encode_cold_start, predict,
                  recommend_top, stm_objective, train_stm)
from .social import (SoSTMState, sostm_objective, train_sostm,
                     update_factor_profile)
from .baselines import (FactorModel, ctr_objective, factor_loss_and_grads,
                        train_ctr_i, train_pmf, train_sorec)
from .evaluation import (ColdStartReport, RankingReport, aps,
                         cold_start_protocol, maps, pps_curve,
                         profile_sparsity, topic_top_items)
from .synthetic import PRESETS, GroundTruth, SynthConfig, generate_planted
from .model_io import load_model, save_model

__version__ = "0.1.0"
