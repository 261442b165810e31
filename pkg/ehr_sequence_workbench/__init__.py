"""
EHR Sequence Workbench

Synthetic longitudinal patient cohorts, clinical-event tokenization, transformer
and state-space sequence models on a numpy autodiff engine, a boosted-tree
baseline, and one-axis ablation grids with bootstrap evaluation.
"""

# ============================================================================
# PACKAGE METADATA
# ============================================================================
__version__ = "1.0.0"
__description__ = "Desk-scale workbench for EHR sequence-model ablations"

# ============================================================================
# IMPORTS
# ============================================================================
from .main import run  # noqa: E402
from .parameters import initialize_with_data_folder, load_parameters_from_file  # noqa: E402


# ============================================================================
# USER HELPER FUNCTIONS
# ============================================================================
def create_sample_config(target_folder=None):
    """
    Copies the packaged experiment_data.py into ``target_folder`` (default: cwd).

    Returns True when the file was created.
    """
    import os
    import shutil

    from .parameters import DEFAULT_EXPERIMENT_DATA_FILE, EXPERIMENT_DATA_FILE

    target_folder = target_folder or os.getcwd()
    target_file = os.path.join(target_folder, EXPERIMENT_DATA_FILE)
    if os.path.exists(target_file):
        print(f"⚠️  Experiment file already exists at {target_file}")
        return False
    try:
        shutil.copy2(DEFAULT_EXPERIMENT_DATA_FILE, target_file)
    except OSError as e:
        print(f"❌ Error creating experiment file: {e}")
        return False
    print(f"✅ Sample experiment created at: {target_file}")
    print("📝 Edit cohorts, grid and ablations to define your experiment")
    return True


# ============================================================================
# EXPORTS
# ============================================================================
__all__ = [
    "run",
    "create_sample_config",
    "load_parameters_from_file",
    "initialize_with_data_folder",
    "__version__",
]
