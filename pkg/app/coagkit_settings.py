import os
from os import path
import configparser
import psutil
from dotenv import load_dotenv
from coagkit_logging import logger, get_logging_level_from_name, set_logger_level


class CoagkitSettings:
    def __init__(self):
        load_dotenv()
        self.config = configparser.ConfigParser()
        # Set optionxform to lambda x: x to preserve case
        self.config.optionxform = lambda x: x
        self.coagkit_config = path.join(path.dirname(path.abspath(__file__)), "config/coagkit.conf")
        self.load_configuration(self.coagkit_config)
        self.apply_environment()
        set_logger_level("coagkitLog", self.coagkitLogLevel)

    def load_configuration(self, coagkit_config=None):
        if coagkit_config is None:
            coagkit_config = self.coagkit_config

        try:
            self.config.read(coagkit_config)
            for section in ["General", "Solver", "Simulation", "Chain", "Study", "Log"]:
                for option in self.config.options(section):
                    value = self.config.get(section, option)
                    setattr(self, option, self.validate_option(section, option, value))
                    logger.debug(f"{option}: {value}")

            logger.debug("Configuration loaded successfully")
        except configparser.Error as e:
            logger.error(f"Error reading {coagkit_config} configuration: {e}")

    def validate_option(self, section, option, value):
        try:
            if section == "General":
                if option in ["workerThreads"]:
                    return int(value)
            elif section == "Solver":
                if option in ["picardMaxIterations", "picardNodes", "maxAtoms"]:
                    return int(value)
                elif option in ["rkMethod"]:
                    return str(value)
                else:
                    return float(value)
            elif section == "Simulation":
                if option in ["defaultSeed", "s2RefreshEvery", "maxFamilyParticles"]:
                    return int(value)
                elif option in ["cacheTolerance"]:
                    return float(value)
            elif section == "Chain":
                if option in ["defaultNmax"]:
                    return int(value)
                else:
                    return float(value)
            elif section == "Study":
                if option in ["minimumResolvableCount", "sampleGridPoints"]:
                    return int(value)
                else:
                    return float(value)
            elif section == "Log":
                logLevel = get_logging_level_from_name(value)
                if logLevel == "":
                    return get_logging_level_from_name("INFO")
                else:
                    return logLevel

        except (configparser.NoOptionError, ValueError) as e:
            raise ValueError(f"Invalid configuration: Section={section}, Option={option}, Value={value}. Error: {e}")

        return value

    def apply_environment(self):
        """Environment variables win over the config file for seed and worker count."""
        seed = os.getenv("COAGKIT_SEED")
        if seed:
            self.defaultSeed = self.validate_option("Simulation", "defaultSeed", seed)
            logger.debug(f"defaultSeed overridden from environment: {self.defaultSeed}")
        workers = os.getenv("COAGKIT_WORKERS")
        if workers:
            self.workerThreads = self.validate_option("General", "workerThreads", workers)

    def worker_count(self):
        if self.workerThreads > 0:
            return self.workerThreads
        return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


settings = CoagkitSettings()
