"""Constants for the Corruption Restoration Transformer pipeline."""

# Corruption kinds
KIND_CENTERED_SQUARE = "centered-square"
KIND_GAUSSIAN_NOISE = "gaussian-noise"
KIND_HORIZONTAL_LINES = "horizontal-lines"
KIND_WATER_DROPS = "water-drops"
KIND_IDENTITY = "identity"
CORRUPTION_KINDS = (
    KIND_CENTERED_SQUARE,
    KIND_GAUSSIAN_NOISE,
    KIND_HORIZONTAL_LINES,
    KIND_WATER_DROPS,
    KIND_IDENTITY,
)

DEFAULT_SQUARE_FRACTION = 0.4
DEFAULT_NOISE_SIGMA = 0.20
DEFAULT_LINES_FRACTION = 0.5
LINES_FRACTIONS = (0.2, 0.5)
DEFAULT_LINES_THICKNESS = 4
DEFAULT_DROPS_COUNT_RANGE = (5, 12)
DEFAULT_DROPS_RADIUS_RANGE = (0.03, 0.10)
DEFAULT_DROPS_ALPHA = 0.7

# Imaging
CHANNELS = 3
MIN_IMAGE_SIDE = 16
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 99.0

# Autodiff numerical guards
LOG_CLAMP_MIN = 1e-12
LAYER_NORM_EPS = 1e-5

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Model
ROPE_BASE = 10000.0
INIT_STD = 0.02
# Attention temperatures are clamped to at least this after each update
TAU_MIN = 1e-2
# Discriminator scores live in [DISC_SCORE_EPS, 1 - DISC_SCORE_EPS]
DISC_SCORE_EPS = 1e-6

# Loss weights
DEFAULT_LAMBDA_L1 = 10.0
DEFAULT_LAMBDA_SSIM = 1.0
DEFAULT_LAMBDA_ADV = 0.05

ADV_NON_SATURATING = "non-saturating"
ADV_MINIMAX = "minimax"

# Dataset
DEFAULT_SPLIT_RATIO = 0.8
SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
MANIFEST_FILE = "manifest.jsonl"
MANIFEST_VERSION = 1
CLEAN_DIR = "clean"
CORRUPTED_DIR = "corrupted"
IMAGE_SUFFIXES = (".png",)
DEFAULT_PREFETCH = 2

# Training artifacts
HISTORY_FILE = "history.jsonl"
LAST_CHECKPOINT = "last.crt"
BEST_CHECKPOINT = "best.crt"
DIAGNOSTICS_FILE = "diagnostics.json"

# Checkpoint format
CHECKPOINT_MAGIC = b"CRT1"
CHECKPOINT_VERSION = 1

# Profiles
PROFILE_LIBERO = "libero"
PROFILE_METAWORLD = "metaworld"
PROFILE_DESK = "desk"
PROFILE_TOY = "toy"
PROFILE_PAPER = "paper"

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
