"""
Configuration management for the Bell workbench
Loads environment variables and provides configuration object
"""

import os
from dataclasses import dataclass
from dotenv import load_dotenv

load_dotenv()


@dataclass
class WorkbenchConfig:
    # Reproducibility
    seed: int = int(os.getenv("WORKBENCH_SEED", "20240101"))
    block_size: int = int(os.getenv("WORKBENCH_BLOCK_SIZE", "65536"))  # trials per random-stream block

    # Execution
    threads: int = int(os.getenv("WORKBENCH_THREADS", "1"))
    out_dir: str = os.getenv("WORKBENCH_OUT_DIR", "runs")
    log_level: str = os.getenv("WORKBENCH_LOG_LEVEL", "INFO")

    # Default units (natural units); --hbar and --mass override per run
    hbar: float = float(os.getenv("WORKBENCH_HBAR", "1.0"))
    mass: float = float(os.getenv("WORKBENCH_MASS", "1.0"))

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("WORKBENCH_THREADS must be at least 1")
        if self.block_size < 1:
            raise ValueError("WORKBENCH_BLOCK_SIZE must be at least 1")
        if self.hbar <= 0 or self.mass <= 0:
            raise ValueError("WORKBENCH_HBAR and WORKBENCH_MASS must be positive")


# Create global config instance
config = WorkbenchConfig()
