"""Pilot-free multi-user uplink OFDM sensing and decoding.

A base station with a receive array observes the superposition of several
single-antenna uplink users over OFDM blocks. Neither the transmitted
messages nor the channels are known; each user is only distinguished by a
public beamforming codebook. The library synthesizes such measurements,
recovers every propagation path's continuous delay, Doppler and angle by
atomic-norm minimization (a primal semidefinite route with Toeplitz
decomposition, and a dual-polynomial route evaluated on grids), fuses the
per-user evidence for shared targets, localizes those targets from bistatic
delays, and finally decodes the user messages on top of the estimated
geometry.
"""

__version__ = "0.1.0"

from .atoms import (ToeplitzTensor, decode_index, encode_index,
                    hermitian_part, index_maps, lag_class_means, lag_tables,
                    measure, measure_adjoint, measurement_matrix,
                    steering_matrix, steering_vector, toeplitz_adjoint,
                    toeplitz_apply, toeplitz_project, toeplitz_zeros,
                    wrap_distance)
from .decode import (DecodeResult, build_dictionary, demap_ask,
                     recover_messages, symbols_and_ser)
from .dualpoly import (PeakSet, PolyGrid, eval_poly, find_peaks,
                       grid_to_csv, peaks_to_csv, scan_grid)
from .experiments import (EXPERIMENTS, ExperimentResult, run_dualpoly2d,
                          run_experiment, run_fusion_aoa_ser,
                          run_localization, run_recovery3d)
from .fusion import (FusionInput, circular_mean, estimate_collaborative,
                     estimate_non_collaborative, fuse_aligned, fuse_average,
                     fuse_max, fuse_weighted)
from .locate import (Geometry, LocateResult, localization_mae,
                     localization_trial, localize, normalize_delays,
                     physical_delay)
from .model import (Codebook, MeasurementSet, PathParams, Scene, SceneConfig,
                    UserSpec, canonicalize_phase, derive_seed, draw_message,
                    eta_from_sigma, make_codebook, make_scene, snr_to_sigma,
                    splitmix64, synthesize_measurements)
from .sdp import (DualSolution, PrimalSolution, SolverOpts, bordered_block,
                  project_l2_ball, project_psd, solve_dual, solve_primal)
from .vandermonde import (AtomicEstimate, PairingCapError, PencilError,
                          decompose, estimate_powers, pair_triples,
                          pencil_1d, signal_subspace)

__all__ = [name for name in dir() if not name.startswith("_")]
