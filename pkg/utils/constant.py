MAX_WORKERS_NUMBER = 4

# 环境变量 (Environment variables)
ENV_THREADS = "NOPT_THREADS"
ENV_OUTPUT_DIR = "NOPT_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"

DEFAULT_SEEDS = (1, 2, 3)

# Dataset container
FORMAT_VERSION = "1.0"
DTYPE_TAG = "f32le"
LAYOUT_TAG = "TCHW"
MANIFEST_FILE = "manifest.json"
PAYLOAD_FILE = "payload.bin"

# Checkpoint container
CHECKPOINT_FILE = "checkpoint.json"
WEIGHTS_FILE = "weights.bin"

# Adam
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

MAX_BATCH_SIZE = 32

# Gaussian random field
GRF_ALPHA = 2.5
GRF_TAU = 7.0

# Ranges of physical parameters per stage: pretrain / train / ood.
PARAM_RANGES = {
    "poisson": {"pretrain": [1, 20], "train": [5, 15], "ood": [15, 50]},
    "helmholtz": {"pretrain": [1, 20], "train": [5, 15], "ood": [15, 20]},
    "ns": {"pretrain": [100, 300, 500, 800, 1000], "train": [300], "ood": [10000]},
    "rd": {"pretrain": [], "train": [], "ood": []},
}
SUPPORTED_PDES = ("poisson", "helmholtz", "rd", "ns")

# Reaction-diffusion (FitzHugh-Nagumo)
RD_DU = 1e-3
RD_DV = 5e-3
RD_K = 5e-3
RD_DT = 0.01
RD_RECORD_STRIDE = 5
RD_T_FINAL = 5.0
RD_T_IN = 10
RD_STABILITY_SAFETY = 0.5

# Navier-Stokes (vorticity form)
NS_FORCING_AMPLITUDE = 0.1
NS_RECORD_DT = 0.125
NS_FRAMES = 33
NS_CFL_SAFETY = 0.5
NS_DT_MAX = 1e-2
NS_DT_MIN = 1e-6

# Algorithm 1
ICL_K = 5
ICL_CHUNK = 64

# Run ledger and stage folders
LEDGER_FILE = "ledger.jsonl"
STAGE_DIRS = ("data", "pretrain", "finetune", "icl", "cost", "sweep", "report")
