"""Configuration management for spherical_ot."""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="SPHERICAL_OT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Tolerance tiers
    feasibility_tol: float = Field(default=1e-10, gt=0, description="Marginal/mass balance tolerance")
    optimality_tol: float = Field(default=1e-9, gt=0, description="Dual feasibility and slackness tolerance")
    geometry_tol: float = Field(default=1e-12, gt=0, description="Unit norm, tangency, duplicate merging")
    tie_tol: float = Field(default=1e-9, gt=0, description="Relative tolerance for argmin ties")
    match_tol: float = Field(default=1e-8, gt=0, description="Nearest-atom binning radius")

    # Cost kernels
    bisection_xtol: float = Field(default=1e-12, gt=0)
    bisection_max_iter: int = Field(default=200, gt=0)
    boundary_tol: float = Field(default=1e-9, gt=0, description="Flag M evaluations this close to |a|^2 = 0")

    # Exact solver
    max_pivots: int = Field(default=200_000, gt=0)
    bland_after: int = Field(default=50, ge=0, description="Degenerate pivots before switching to Bland's rule")
    simplex_arc_limit: int = Field(default=20_000, gt=0, description="Above this arc count, solve with HiGHS")

    # Verification
    monotonicity_max_tuples: int = Field(default=200_000, gt=0)
    monotonicity_seed: int = Field(default=20240229)

    # Reflector iteration
    reflector_eta: float = Field(default=0.5, gt=0)
    reflector_cap: float = Field(default=0.5, gt=0)
    reflector_oscillation_limit: int = Field(default=20, gt=0)
    reflector_max_iter: int = Field(default=2000, gt=0)

    # Logging
    log_level: str = Field(default="INFO")
    log_json: bool = Field(default=False)

    def tolerances(self) -> dict:
        """Tolerance values embedded in every artifact."""
        return {
            "feasibility_tol": self.feasibility_tol,
            "optimality_tol": self.optimality_tol,
            "geometry_tol": self.geometry_tol,
            "tie_tol": self.tie_tol,
            "match_tol": self.match_tol,
        }


settings = Settings()
