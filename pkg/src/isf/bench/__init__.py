from .runner import available_experiments, load_experiment, run_experiment
from .checks import check_properties

__all__ = ["available_experiments", "load_experiment", "run_experiment", "check_properties"]
