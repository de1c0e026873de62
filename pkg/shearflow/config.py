"""
Centralized Configuration Management for shearflow
Single source of truth for tolerances, solver defaults and application settings
"""

import os
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple


@dataclass
class ToleranceConfig:
    """Tolerances shared by the tensor calculus and the certification code"""

    TOL_EQ_REL: float = 1e-12            # |E| = g test, relative to g
    TOL_NUM: float = 1e-10               # sign-type property assertions
    SENSITIVITY_BAND_REL: float = 1e-6   # eps_A for linearized solves, relative to g
    REPORT_BAND_REL: float = 1e-3        # eps_A for region reporting, relative to g
    TOL_SIGN_REL: float = 1e-8           # sign condition, relative to g * max|lambda|
    TOL_B_REL: float = 1e-6              # B-probe tolerance, relative to 1 + |j|
    GRAD_TOL_REL: float = 1e-8           # optimizer stop, relative to 1 + |z_d|
    SIGN_VIOLATION_FRACTION: float = 0.05
    WEAK_RESIDUAL_TOL: float = 1e-6


@dataclass
class SolverDefaults:
    """Nonlinear and linear solver defaults"""

    TOL_RESIDUAL: float = 1e-10
    MAX_ITERS: int = 200
    LINESEARCH: float = 0.5              # backtracking factor
    MIN_STEP: float = 1e-8               # smallest Newton step before fallback
    PICARD_RELAX: float = 1.0
    LINEARIZED_DAMPING: float = 0.7
    QUADRATURE_ORDER: int = 4
    OPTIMIZER_MAX_ITERS: int = 200
    BB_STEP_MIN: float = 1e-14
    ARMIJO_C1: float = 1e-4
    FACTOR_CACHE_SIZE: int = 16


@dataclass
class AppConfig:
    """Application-level configuration"""

    APP_NAME: str = "shearflow"
    APP_VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"  # DEBUG, INFO, WARNING, ERROR, CRITICAL
    LOG_TO_FILE: bool = True
    LOG_DIR: str = "logs"
    LOG_MAX_SIZE: int = 10485760  # 10MB
    LOG_BACKUP_COUNT: int = 5

    # Outputs
    OUTPUT_DIR: str = "runs"
    DEFAULT_SEED: int = 42


@dataclass
class DevelopmentConfig(AppConfig):
    """Configuration for development environment"""
    LOG_LEVEL: str = "DEBUG"


@dataclass
class ProductionConfig(AppConfig):
    """Configuration for production environment"""
    LOG_LEVEL: str = "INFO"
    LOG_TO_FILE: bool = True


# ═══════════════════════════════════════════════════════════════════════════
# CONFIGURATION LOADER
# ═══════════════════════════════════════════════════════════════════════════

class Config:
    """
    Main configuration class - use this to access all settings.

    Usage:
        from shearflow.config import config

        print(config.tol.TOL_NUM)
        print(config.solver.MAX_ITERS)
        print(config.app.LOG_LEVEL)
    """

    def __init__(self, environment: str = "production"):
        """
        Initialize configuration.

        Args:
            environment: "development" or "production"
        """
        self.environment = environment

        self.tol = ToleranceConfig()
        self.solver = SolverDefaults()

        if environment == "development":
            self.app = DevelopmentConfig()
        else:
            self.app = ProductionConfig()

    def is_development(self) -> bool:
        return self.environment == "development"

    def validate(self) -> Tuple[bool, Optional[str]]:
        """
        Validate configuration.

        Returns:
            (is_valid, error_message)
        """
        for name, value in asdict(self.tol).items():
            if value <= 0:
                return False, f"Tolerance {name} must be positive"

        if self.solver.TOL_RESIDUAL <= 0:
            return False, "TOL_RESIDUAL must be positive"

        if self.solver.MAX_ITERS < 1:
            return False, "MAX_ITERS must be at least 1"

        if not 0 < self.solver.LINESEARCH < 1:
            return False, "LINESEARCH must lie in (0, 1)"

        if not 0 < self.solver.PICARD_RELAX <= 1:
            return False, "PICARD_RELAX must lie in (0, 1]"

        if self.solver.QUADRATURE_ORDER not in (2, 4, 5, 6):
            return False, "QUADRATURE_ORDER must be one of 2, 4, 5, 6"

        return True, None

    def get_summary(self) -> Dict:
        """Get configuration summary for reports and debugging"""
        return {
            "environment": self.environment,
            "app_version": self.app.APP_VERSION,
            "log_level": self.app.LOG_LEVEL,
            "tolerances": asdict(self.tol),
            "solver": asdict(self.solver),
        }


# ═══════════════════════════════════════════════════════════════════════════
# GLOBAL CONFIG INSTANCE
# ═══════════════════════════════════════════════════════════════════════════

_environment = os.getenv("SHEARFLOW_ENV", "production")

config = Config(environment=_environment)
