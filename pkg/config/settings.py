import os


class HarnessConfig:
    """Configuration settings for the factorial design harness"""

    # Reproducibility and output
    MASTER_SEED: int = int(os.getenv("FACTORIAL_SEED", "0"))
    OUT_DIR: str = os.getenv("FACTORIAL_OUT_DIR", "results")
    WORKERS: int = int(os.getenv("FACTORIAL_WORKERS", "1"))

    # Acquisition optimizer
    RESTARTS: int = int(os.getenv("FACTORIAL_RESTARTS", "5"))
    MAX_ITERS: int = int(os.getenv("FACTORIAL_MAX_ITERS", "500"))
    TOL: float = float(os.getenv("FACTORIAL_TOL", "1e-6"))
    PROXY_MIN_P: int = int(os.getenv("FACTORIAL_PROXY_MIN_P", "15"))  # min-eig proxy from this p upward

    # Estimation
    SINGULAR_TOL: float = float(os.getenv("FACTORIAL_SINGULAR_TOL", "1e-10"))

    # Logging Configuration
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FILE: str = os.getenv("LOG_FILE", "factorial.log")

    # Development Configuration
    DEBUG_MODE: bool = os.getenv("DEBUG_MODE", "false").lower() == "true"

    @classmethod
    def validate_config(cls) -> bool:
        """
        Validate that the configured values are usable

        Returns:
            True if configuration is valid, False otherwise
        """
        problems = []
        if cls.WORKERS < 1:
            problems.append(f"FACTORIAL_WORKERS={cls.WORKERS} (must be >= 1)")
        if cls.RESTARTS < 1:
            problems.append(f"FACTORIAL_RESTARTS={cls.RESTARTS} (must be >= 1)")
        if cls.MAX_ITERS < 1:
            problems.append(f"FACTORIAL_MAX_ITERS={cls.MAX_ITERS} (must be >= 1)")
        if cls.TOL <= 0:
            problems.append(f"FACTORIAL_TOL={cls.TOL} (must be > 0)")
        if cls.SINGULAR_TOL <= 0:
            problems.append(f"FACTORIAL_SINGULAR_TOL={cls.SINGULAR_TOL} (must be > 0)")
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"LOG_LEVEL={cls.LOG_LEVEL}")

        if problems:
            print(f"❌ Invalid configuration: {', '.join(problems)}")
            return False

        return True

    @classmethod
    def get_config_summary(cls) -> str:
        """
        Get a summary of the current configuration

        Returns:
            Configuration summary string
        """
        return f"""
Factorial Design Harness Configuration Summary:
━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

Reproducibility:
  • Master Seed: {cls.MASTER_SEED}
  • Output Directory: {cls.OUT_DIR}
  • Workers: {cls.WORKERS}

Acquisition Optimizer:
  • Restarts: {cls.RESTARTS}
  • Max Iterations: {cls.MAX_ITERS}
  • Tolerance: {cls.TOL}
  • Min-Eigenvalue Proxy From p: {cls.PROXY_MIN_P}

Estimation:
  • Singular Tolerance: {cls.SINGULAR_TOL}

Development:
  • Debug Mode: {'✓' if cls.DEBUG_MODE else '❌'}
  • Log Level: {cls.LOG_LEVEL}
  • Log File: {cls.LOG_FILE}

━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
        """.strip()

# Configuration validation on import
if __name__ == "__main__":
    if HarnessConfig.validate_config():
        print("✅ Configuration is valid!")
        print(HarnessConfig.get_config_summary())
    else:
        print("❌ Configuration validation failed!")
        exit(1)
