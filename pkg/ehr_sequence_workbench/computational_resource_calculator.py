# ============================================================================
# COMPUTATIONAL RESOURCE CALCULATOR MODULE
# ============================================================================
# Estimates the cost of an ablation before execution and compares it with
# the machine's memory and cores
# Provides early warning for grids that will not finish on a desk machine

import psutil

from .ablation import GBDT, expand
from .model_config import closed_form_parameter_count, preset

# Rough per-run constants (fp64 numpy autodiff on CPU)
BYTES_PER_FLOAT = 8
ACTIVATION_FLOATS_PER_TOKEN_LAYER = 24
FLOPS_PER_PARAMETER_TOKEN = 6
CPU_FLOPS_PER_SECOND = 2e9
ASSUMED_VOCAB_SIZE = 4470


# ============================================================================
# COMPLEXITY ESTIMATION FUNCTIONS
# ============================================================================
def estimate_problem_size(experiment, vocab_size=ASSUMED_VOCAB_SIZE):
    """Run count, largest model and tokens processed over all sequence-model runs."""
    specs = expand(experiment.grid)
    n_patients = max((cfg.n_patients for cfg in experiment.cohorts.values()), default=0)
    epochs = experiment.train.pretrain_epochs + experiment.train.finetune_epochs
    sequence_runs = [s for s in specs if s.model != GBDT]
    largest, layer_width, token_passes, parameter_tokens = 0, 0, 0, 0
    for spec in sequence_runs:
        cfg = preset(spec.model, spec.size, vocab_size, spec.C)
        n_params = closed_form_parameter_count(cfg)
        if n_params > largest:
            largest, layer_width = n_params, cfg.n_layers * cfg.d_m
        tokens = n_patients * spec.C * epochs
        token_passes += tokens
        parameter_tokens += n_params * tokens
    return {
        "runs": len(specs),
        "sequence_runs": len(sequence_runs),
        "gbdt_runs": len(specs) - len(sequence_runs),
        "largest_model_parameters": largest,
        "largest_layer_width": layer_width,
        "token_passes": token_passes,
        "parameter_tokens": parameter_tokens,
        "max_context": max((s.C for s in specs), default=0),
    }


def estimate_memory_requirements(problem_size, experiment):
    """Peak memory of one run in MB: weights, AdamW moments, gradients and activations."""
    weights = problem_size["largest_model_parameters"] * BYTES_PER_FLOAT
    optimizer = 2 * weights
    gradients = weights
    batch_tokens = experiment.train.batch_size * problem_size["max_context"]
    activations = batch_tokens * ACTIVATION_FLOATS_PER_TOKEN_LAYER * problem_size["largest_layer_width"] * BYTES_PER_FLOAT
    per_run = (weights + optimizer + gradients + activations) / 1e6
    return {
        "weights_mb": round(weights / 1e6, 2),
        "optimizer_mb": round(optimizer / 1e6, 2),
        "activations_mb": round(activations / 1e6, 2),
        "per_run_mb": round(per_run, 2),
        "total_estimated_mb": round(per_run * max(1, experiment.jobs), 2),
    }


def estimate_run_time(problem_size, jobs=1):
    seconds = FLOPS_PER_PARAMETER_TOKEN * problem_size["parameter_tokens"] / CPU_FLOPS_PER_SECOND
    seconds /= max(1, jobs)
    return {"estimated_seconds": round(seconds, 1), "complexity_class": get_complexity_class(seconds)}


def get_complexity_class(seconds):
    if seconds < 600:
        return "Desk scale (< 10 minutes)"
    if seconds < 3 * 3600:
        return "Afternoon (< 3 hours)"
    if seconds < 48 * 3600:
        return "Overnight to two days"
    return "Cluster scale (> 2 days, consider the DeskTiny size or fewer axes)"


def check_system_resources():
    memory = psutil.virtual_memory()
    cpu_freq = psutil.cpu_freq()
    return {
        "available_memory_gb": round(memory.available / 1024 ** 3, 2),
        "total_memory_gb": round(memory.total / 1024 ** 3, 2),
        "cpu_cores": psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True),
        "cpu_freq_ghz": round(cpu_freq.current / 1000, 2) if cpu_freq else "Unknown",
    }


def assess_feasibility(problem_size, memory_req, system_resources, jobs=1):
    warnings, recommendations = [], []
    feasible = True

    required_gb = memory_req["total_estimated_mb"] / 1024
    if required_gb > system_resources["available_memory_gb"] * 0.8:
        warnings.append(f"⚠️  High memory usage: {required_gb:.1f}GB required, "
                        f"{system_resources['available_memory_gb']:.1f}GB available")
        recommendations.append("Lower --jobs or the batch size")
        if required_gb > system_resources["available_memory_gb"]:
            feasible = False
    if jobs > system_resources["cpu_cores"]:
        warnings.append(f"⚠️  {jobs} workers on {system_resources['cpu_cores']} physical cores")
        recommendations.append("Use at most one worker per physical core")
    if problem_size["largest_model_parameters"] > 5_000_000:
        warnings.append("⚠️  Full-size presets on a CPU autodiff engine")
        recommendations.append("Use the DeskTiny size for local runs")
    return {"feasible": feasible, "warnings": warnings, "recommendations": recommendations}


# ============================================================================
# MAIN ANALYSIS FUNCTION
# ============================================================================
def analyze_computational_requirements(experiment, jobs=1, verbose=True):
    """Complete resource analysis of an experiment; prints a report when verbose."""
    problem_size = estimate_problem_size(experiment)
    memory_req = estimate_memory_requirements(problem_size, experiment)
    run_time = estimate_run_time(problem_size, jobs)
    system_resources = check_system_resources()
    assessment = assess_feasibility(problem_size, memory_req, system_resources, jobs)

    if verbose:
        print("\n🔬 COMPUTATIONAL RESOURCE ANALYSIS")
        print(f"   📊 Runs: {problem_size['runs']} ({problem_size['sequence_runs']} sequence models, "
              f"{problem_size['gbdt_runs']} GBDT)")
        print(f"   📊 Largest model: {problem_size['largest_model_parameters']:,} parameters")
        print(f"   💾 Memory per run: {memory_req['per_run_mb']} MB, total {memory_req['total_estimated_mb']} MB")
        print(f"   ⏱️  Estimated time: {run_time['estimated_seconds']} s ({run_time['complexity_class']})")
        print(f"   🖥️  {system_resources['cpu_cores']} cores, "
              f"{system_resources['available_memory_gb']:.2f} / {system_resources['total_memory_gb']:.2f} GB free")
        print("   ✅ Appears feasible" if assessment["feasible"] else "   ❌ May exceed available memory")
        for warning in assessment["warnings"]:
            print(f"   {warning}")
        for rec in assessment["recommendations"]:
            print(f"   • {rec}")

    return {
        "problem_size": problem_size,
        "memory_requirements": memory_req,
        "run_time": run_time,
        "system_resources": system_resources,
        "assessment": assessment,
    }
