"""
Default settings for the PointCrack3D pipeline
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Base configuration
BASE_DIR = Path(__file__).parent.parent.parent.resolve()  # Project root
DEFAULT_RUN_DIR = Path(os.getenv("POINTCRACK3D_RUN_DIR", str(BASE_DIR / "runs")))
LOG_FILE_NAME = "pointcrack3d.log"
LOG_LEVEL = "INFO"

# Voxelization [d, n, s]
VOXEL_SIZE = 0.5  # meters
POINTS_PER_VOXEL = 2048
STRIDES = (1.0,)  # multiples of d; 1.0 means no overlap

# Dataset preparation
NEGATIVE_BAND = 0.15  # meters around crack points kept as negatives
AUGMENT_COPIES = 10
AUGMENT_MAX_OFFSET = 0.5  # meters
PERTURB_SCALE = 0.001  # meters per standard normal draw
PERTURB_LIMIT = 0.005  # meters
FEATURES = "xyz+rgb+i"
COORDINATE_MODE = "local"  # "local" (origin-relative /d) or "global" (training min-max)

# Scorer
NEIGHBOURHOOD_RADIUS = 0.1  # normalized voxel units
HIDDEN_WIDTHS = (64, 64, 32)
DROPOUT = 0.5
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.75
FOCAL_GAMMA_GRID = (2.0, 3.0, 4.0, 5.0)
FOCAL_ALPHA_GRID = (0.10, 0.25, 0.50, 0.75, 0.90)
EPOCHS = 101
LEARNING_RATE = 0.01
LR_DECAY = 0.5
LR_DECAY_EVERY = 10  # epochs
BATCH_SIZE = 5  # voxels
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-7
PROBABILITY_CLAMP = 1e-7

# Post-processing
CONFIDENCE_THRESHOLD = 0.59  # Delta_H
LINK_DISTANCE = 0.04  # Delta_r, meters
MIN_CLUSTER_SIZE = 20  # Delta_n
THRESHOLD_SWEEP = (0.50, 0.59, 0.65)

# Evaluation
MATCH_FRACTION = 0.5  # alpha_match
CONTINUITY_MODE = "all"  # "all" (undetected cracks count 0) or "detected"
LARGE_CRACK_POINTS = 500
WIDE_CRACK_WIDTH = 0.03  # meters

# Classification export colours
TP_COLOR = (0, 0, 255)  # blue
FN_COLOR = (255, 0, 0)  # red
FP_COLOR = (0, 255, 255)  # cyan

# Synthetic data
SYNTH_SURFACES = 5
SYNTH_CRACKS_PER_SURFACE = 6
SYNTH_EXTENT = (3.0, 3.0)  # meters
SYNTH_DENSITY = 10000.0  # points per square meter
SYNTH_ROUGHNESS = 0.05  # meters
SYNTH_OCTAVES = 4
SYNTH_GAIN = 0.5  # amplitude ratio between octaves
SYNTH_FEATURE_SCALE = 1.0  # meters, wavelength of the first octave
SYNTH_NOISE_SIGMA = 0.001  # meters
SYNTH_MIN_WIDTH = 0.005  # meters
SYNTH_MAX_WIDTH = 0.10  # meters
SYNTH_CRACK_LENGTH = (0.6, 1.0)  # meters
SYNTH_DARKENING = 0.5
SYNTH_CRACK_KEEP = 0.4  # fraction of surface density kept inside a crack
SYNTH_DEPTH_RATIO = 1.0  # crack depth as a multiple of its max width
