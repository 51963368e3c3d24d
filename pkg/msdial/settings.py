"""Settings."""
from os import getenv as _getenv

# Default training epochs per replication
EPOCHS = int(_getenv("MSDIAL_EPOCHS", 50))

# Default replications per experiment
REPLICATIONS = int(_getenv("MSDIAL_REPLICATIONS", 20))

# Default base random seed
SEED = int(_getenv("MSDIAL_SEED", 0))

# Default output directory for result files
OUTPUT_DIR = _getenv("MSDIAL_OUTPUT_DIR", "results")

# Jhalog backend used for the experiment event log
LOG_BACKEND = _getenv("MSDIAL_LOG_BACKEND", "stdout")
