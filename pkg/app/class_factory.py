from helpers import RuntimeInfoHelper
from experiments import ExperimentRunner

runtime_info_helper = RuntimeInfoHelper()
experiment_runner = ExperimentRunner(runtime_info_helper)
