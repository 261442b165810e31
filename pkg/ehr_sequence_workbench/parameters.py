# ============================================================================
# PARAMETERS MODULE
# ============================================================================
# Loads experiment settings from a Python experiment_data.py file and keeps
# them in module state for the CLI steps
# Cohort sizes, signal, vocabulary, training schedule and ablation grid

import importlib.util
import os

# ============================================================================
# GLOBAL VARIABLE DECLARATIONS
# ============================================================================
_loaded_parameters = {}
_source_file = None

# ============================================================================
# CONFIGURATION CONSTANTS
# ============================================================================
EXPERIMENT_DATA_FILE = "experiment_data.py"
DEFAULT_EXPERIMENT_DATA_FILE = os.path.join(
    os.path.dirname(os.path.dirname(__file__)), "user_data_example", EXPERIMENT_DATA_FILE
)


# ============================================================================
# PARAMETER LOADING FUNCTIONS
# ============================================================================
def resolve_experiment_file(path=None):
    # A folder holding experiment_data.py, the file itself, or the packaged example
    if path is None:
        return DEFAULT_EXPERIMENT_DATA_FILE
    if os.path.isdir(path):
        path = os.path.join(path, EXPERIMENT_DATA_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{EXPERIMENT_DATA_FILE} not found at {path}")
    return path


def load_parameters_from_file(experiment_data_file):
    """Executes an experiment_data.py file and returns its ``experiment_data`` dict."""
    try:
        spec = importlib.util.spec_from_file_location("experiment_data", experiment_data_file)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        if not hasattr(module, "experiment_data"):
            raise AttributeError("experiment_data dictionary not found in module")
        return dict(module.experiment_data)
    except Exception as e:
        raise RuntimeError(f"Error loading experiment data from {experiment_data_file}: {e}")


def initialize_with_data_folder(path=None):
    """Replaces the loaded parameters with those of ``path`` (folder or file)."""
    global _loaded_parameters, _source_file
    _source_file = resolve_experiment_file(path)
    _loaded_parameters = load_parameters_from_file(_source_file)
    return _loaded_parameters


# ============================================================================
# PARAMETER ACCESS FUNCTIONS
# ============================================================================
def get_parameter(key, default=None):
    return _loaded_parameters.get(key, default)


def get_all_parameters():
    return _loaded_parameters.copy()


def get_source_file():
    return _source_file


# ============================================================================
# INITIALIZATION
# ============================================================================
# The packaged example is loaded on import; the CLI replaces it with --config
initialize_with_data_folder()
