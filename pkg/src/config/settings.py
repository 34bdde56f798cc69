"""
BandINR - Configuration Settings
Centralized defaults for simulation, networks, training and I/O
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Project Root
PROJECT_ROOT = Path(__file__).parent.parent.parent
DATA_DIR = Path(os.getenv("BANDINR_DATA_DIR", PROJECT_ROOT / "data"))
LOGS_DIR = PROJECT_ROOT / "logs"
CHECKPOINT_DIR = DATA_DIR / "checkpoints"

PROJECT_NAME = "BandINR"
VERSION = "1.0.0"

# ==================== Numerics ====================
DTYPE = "float64"
FINITE_CHECKS = True  # raise on NaN/Inf intermediates

# ==================== Band Geometry ====================
# Dataset grid (meters)
BAND_INSIDE_DIAMETERS = (0.06, 0.10, 0.14)
BAND_CROSS_SECTION_DIAMETERS = (0.01, 0.02, 0.03)
INSIDE_DIAMETER_RANGE = (0.06, 0.14)
CROSS_SECTION_RANGE = (0.01, 0.03)
MAX_TWIST = 2
STRETCH_RANGE = (1.0, 2.0)
BAND_NODES = 64

# ==================== Simulation ====================
SIM_DT = 0.01  # seconds per environment step
SIM_SUBSTEPS = 4
STRETCH_STIFFNESS = 500.0  # N/m
BENDING_STIFFNESS = 0.05  # N/m on second-neighbour springs
DAMPING = 0.9  # 1/s
GRAVITY = (0.0, 0.0, -9.81)
NODE_MASS = 0.01  # kg
GRASP_RADIUS = 0.02  # m
CONTACT_STIFFNESS = 2000.0  # N/m
MAX_LINEAR_SPEED = 0.25  # m/s at |a| = 1
MAX_ANGULAR_SPEED = 3.14159  # rad/s at |a| = 1

# ==================== Point Clouds ====================
CLOUD_POINTS = 1024
DENSE_SURFACE_SAMPLES = 6000  # oracle samples before visibility filtering
MEDIAL_AXIS_POINTS = 128
SURFACE_SAMPLE_MAX_ROUNDS = 50  # rejection rounds before surface sampling gives up
VIEW_DISTANCE_RANGE = (2.5, 4.0)  # multiples of the bounding radius
VIEW_MIN_ELEVATION = 0.35  # radians above the horizon
HPR_RADIUS_FACTOR = 100.0  # flip radius over farthest-point distance

# ==================== Query Sampling ====================
QUERY_ON_SURFACE = 1024
QUERY_NEAR_SURFACE = 1024
QUERY_OFF_SURFACE = 1024
NEAR_SURFACE_SIGMA = 0.25  # multiples of d_CSD
SCENE_MARGIN = 0.05  # m added around the band bounding box

# ==================== Architecture ====================
LATENT_DIM = 64
ENCODER_POINT_WIDTHS = (64, 128, 256)
ENCODER_HEAD_WIDTHS = (128,)
HYPER_HIDDEN_WIDTH = 256
HYPER_HIDDEN_LAYERS = 3
HYPER_OUTPUT_SCALE = 1e-2
SDF_HIDDEN_LAYERS = 3
SDF_WIDTH_DESK = 32
SDF_WIDTH_FULL = 128
SIREN_FIRST_OMEGA = 30.0
SIREN_HIDDEN_OMEGA = 1.0
SDF_INPUT_SCALE = 10.0  # meters -> network units
POLICY_HIDDEN = (256, 128, 64)
LOG_STD_BOUNDS = (-10.0, 2.0)
PROPRIO_DIM = 14
ACTION_DIM = 7

# ==================== Stage I Losses ====================
LAMBDA_SKEL = 0.1
LAMBDA_KL = 1e-4
LAMBDA_WEIGHT = 1e-2
LAMBDA_CNS = 1.0
SDF_ALPHA = 100.0
SKEL_EPS = 1e-3

# ==================== Optimizer ====================
ADAM_LR_PRETRAIN = 1e-4
ADAM_LR_FINETUNE = 3e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# ==================== Stage I Training ====================
PRETRAIN_STEPS = 20000
PRETRAIN_BATCH_RECORDS = 1
VALIDATION_INTERVAL = 500
VALIDATION_RECORDS = 16
CHECKPOINT_INTERVAL = 2000
LOG_INTERVAL = 100

# ==================== Stage II / SAC ====================
SAC_GAMMA = 0.99
SAC_TARGET_TAU = 0.005
SAC_BATCH_SIZE = 16
SAC_UTD_RATIO = 1
SAC_WARMUP_STEPS = 1000
SAC_INIT_ALPHA = 0.1
BUFFER_CAPACITY_EPISODES = 200
FINETUNE_EPISODES = 500

# ==================== Contrastive ====================
CONTRASTIVE_TOP_M = 5
CONTRASTIVE_NEGATIVES = 16
CONTRASTIVE_MOMENTUM = 0.99
CONTRASTIVE_TAU = 0.1
CONTRASTIVE_WEIGHT = 1.0
CONTRASTIVE_EPISODES_PER_BATCH = 4  # queries per update, run at episode ends
CONTRASTIVE_RETRIEVAL_POINTS = 128  # FPS prefix embedded for d_sg and DTW retrieval

# ==================== Tasks ====================
EPISODE_MAX_STEPS = 200
SUCCESS_DELTA = 0.01  # m
REWARD_ALPHA = 10.0
SUCCESS_BONUS = 100.0
TASK_PRESETS = ("stretch-place", "untwist", "install")
STRETCH_PLACE_RANGE = (1.0, 1.3)  # perimeter ratio of the goal band
STRETCH_PLACE_HOLD_STEPS = 50  # settling steps after the reference pull arrives

# ==================== Evaluation ====================
MC_RESOLUTION = 64
VALIDATION_MC_RESOLUTION = 32
EMD_EXACT_MAX_POINTS = 256
SINKHORN_EPS_RATIO = 1e-3
SINKHORN_ITERATIONS = 500
EVAL_TRIALS = 100

# ==================== Dataset ====================
RECORDS_PER_CLASS = 200
DATASET_DIR = DATA_DIR / "dataset"

# ==================== Logging Settings ====================
LOG_LEVEL = os.getenv("BANDINR_LOG_LEVEL", "INFO")  # DEBUG, INFO, WARNING, ERROR, CRITICAL
LOG_FILE = LOGS_DIR / "bandinr.log"
LOG_MAX_BYTES = 10 * 1024 * 1024  # 10 MB
LOG_BACKUP_COUNT = 5

# ==================== Performance Settings ====================
PROCESSING_WORKERS = int(os.getenv("BANDINR_WORKERS", "1"))
