"""Single-track (bicycle) vehicle model: states, rates, derivatives, limits.

State vector order used throughout the package:
    [r, beta, V, x, y, theta]  (yaw rate, sideslip, speed, position, heading)
Input vector order:
    [a, delta]  (longitudinal acceleration, front steering angle)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 6
INPUT_DIM = 2

# state indices
IR, IBETA, IV, IX, IY, ITHETA = range(6)
# input indices
IA, IDELTA = range(2)


class SpeedFloorError(ValueError):
    """Model evaluation requested below the speed floor (1/V terms blow up)."""


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of one vehicle. All strictly positive."""

    mass: float = 1500.0          # kg
    inertia_z: float = 2500.0     # kg m^2
    lf: float = 1.1               # m, CoG to front axle
    lr: float = 1.6               # m, CoG to rear axle
    cf: float = 55000.0           # N/rad, front cornering stiffness
    cr: float = 55000.0           # N/rad, rear cornering stiffness
    body_length: float = 4.6      # m
    body_width: float = 2.0       # m

    def __post_init__(self):
        vals = (self.mass, self.inertia_z, self.lf, self.lr,
                self.cf, self.cr, self.body_length, self.body_width)
        if any(not np.isfinite(v) or v <= 0.0 for v in vals):
            raise ValueError("all vehicle parameters must be finite and > 0")
        if self.lf + self.lr >= self.body_length:
            raise ValueError("wheelbase lf + lr must be shorter than the body")


@dataclass(frozen=True)
class StabilityDerivatives:
    """Linear-tire coefficients of the single-track yaw/sideslip equations."""

    n_r: float      # yaw damping, < 0
    n_beta: float   # yaw stiffness vs sideslip
    n_delta: float  # yaw control gain, > 0
    y_r: float      # lateral force vs yaw rate
    y_beta: float   # lateral stiffness, < 0
    y_delta: float  # lateral control gain, > 0


@dataclass(frozen=True)
class VehicleState:
    r: float        # rad/s
    beta: float     # rad
    v: float        # m/s
    x: float        # m
    y: float        # m
    theta: float    # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.beta, self.v, self.x, self.y, self.theta])

    @staticmethod
    def from_array(arr) -> "VehicleState":
        r, beta, v, x, y, theta = np.asarray(arr, dtype=float)
        return VehicleState(r=r, beta=beta, v=v, x=x, y=y, theta=theta)


@dataclass(frozen=True)
class ControlInput:
    accel: float    # m/s^2
    steer: float    # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.steer])


@dataclass(frozen=True)
class StateBounds:
    """Box limits on speed, inputs, yaw rate and sideslip."""

    v_min: float = 0.5
    v_max: float = 25.0
    a_max: float = 3.0
    delta_max: float = 0.67
    r_max: float = 0.7
    beta_max: float = 0.5

    def __post_init__(self):
        if self.v_min <= 0.0:
            raise ValueError("v_min must be > 0 (model divides by V)")
        for name in ("v_max", "a_max", "delta_max", "r_max", "beta_max"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class LimitViolation:
    quantity: str
    value: float
    bound: float
    margin: float   # positive = amount beyond the bound


def stability_derivatives(params: VehicleParams) -> StabilityDerivatives:
    """Closed-form linear-tire coefficients from axle geometry and stiffness.

    Derived from a force/moment balance with slip angles
    alpha_f = delta - beta - lf*r/V and alpha_r = -beta + lr*r/V.
    """
    cf, cr, lf, lr = params.cf, params.cr, params.lf, params.lr
    return StabilityDerivatives(
        n_r=-(lf * lf * cf + lr * lr * cr),
        n_beta=lr * cr - lf * cf,
        n_delta=lf * cf,
        y_r=lr * cr - lf * cf,
        y_beta=-(cf + cr),
        y_delta=cf,
    )


def state_rate(state: VehicleState, control: ControlInput,
               deriv: StabilityDerivatives, params: VehicleParams,
               v_floor: float = 1e-6) -> np.ndarray:
    """Time derivative of the 6-state vector for one vehicle.

    Raises SpeedFloorError when V is at or below ``v_floor`` since the
    yaw/sideslip equations contain 1/V and 1/V^2 terms.
    """
    if state.v <= v_floor:
        raise SpeedFloorError(f"speed {state.v} at or below floor {v_floor}")
    out = np.empty(STATE_DIM)
    rate_kernel(state.as_array()[None, :], control.as_array()[None, :],
                deriv, params, out[None, :])
    return out


def rate_kernel(states: np.ndarray, controls: np.ndarray,
                deriv: StabilityDerivatives, params: VehicleParams,
                out: np.ndarray | None = None) -> np.ndarray:
    """Vectorized state rate. ``states`` is (..., 6), ``controls`` (..., 2)."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if out is None:
        out = np.empty(states.shape)
    m, iz = params.mass, params.inertia_z
    r = states[..., IR]
    beta = states[..., IBETA]
    v = states[..., IV]
    theta = states[..., ITHETA]
    a = controls[..., IA]
    delta = controls[..., IDELTA]

    out[..., IR] = (deriv.n_r / (iz * v)) * r + (deriv.n_beta / iz) * beta \
        + (deriv.n_delta / iz) * delta
    out[..., IBETA] = (deriv.y_r / (m * v * v) - 1.0) * r \
        + (deriv.y_beta / (m * v)) * beta + (deriv.y_delta / (m * v)) * delta
    out[..., IV] = a
    out[..., IX] = v * np.cos(theta)
    out[..., IY] = v * np.sin(theta)
    out[..., ITHETA] = r
    return out


def state_rate_jacobians(state: VehicleState, control: ControlInput,
                         deriv: StabilityDerivatives, params: VehicleParams,
                         v_floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (d rate / d state, d rate / d input), 6x6 and 6x2."""
    if state.v <= v_floor:
        raise SpeedFloorError(f"speed {state.v} at or below floor {v_floor}")
    jx = np.zeros((1, STATE_DIM, STATE_DIM))
    ju = np.zeros((1, STATE_DIM, INPUT_DIM))
    jacobian_kernel(state.as_array()[None, :], control.as_array()[None, :],
                    deriv, params, jx, ju)
    return jx[0], ju[0]


def jacobian_kernel(states: np.ndarray, controls: np.ndarray,
                    deriv: StabilityDerivatives, params: VehicleParams,
                    jx: np.ndarray, ju: np.ndarray) -> None:
    """Fill (..., 6, 6) and (..., 6, 2) Jacobian arrays in place."""
    m, iz = params.mass, params.inertia_z
    r = states[..., IR]
    beta = states[..., IBETA]
    v = states[..., IV]
    theta = states[..., ITHETA]
    delta = controls[..., IDELTA]
    inv_v = 1.0 / v
    inv_v2 = inv_v * inv_v

    jx[..., IR, IR] = deriv.n_r / iz * inv_v
    jx[..., IR, IBETA] = deriv.n_beta / iz
    jx[..., IR, IV] = -deriv.n_r / iz * r * inv_v2

    jx[..., IBETA, IR] = deriv.y_r / m * inv_v2 - 1.0
    jx[..., IBETA, IBETA] = deriv.y_beta / m * inv_v
    jx[..., IBETA, IV] = (-2.0 * deriv.y_r / m * r * inv_v
                          - deriv.y_beta / m * beta
                          - deriv.y_delta / m * delta) * inv_v2

    jx[..., IX, IV] = np.cos(theta)
    jx[..., IX, ITHETA] = -v * np.sin(theta)
    jx[..., IY, IV] = np.sin(theta)
    jx[..., IY, ITHETA] = v * np.cos(theta)
    jx[..., ITHETA, IR] = 1.0

    ju[..., IV, IA] = 1.0
    ju[..., IR, IDELTA] = deriv.n_delta / iz
    ju[..., IBETA, IDELTA] = deriv.y_delta / m * inv_v


def hessian_kernel(states: np.ndarray, controls: np.ndarray, mult: np.ndarray,
                   deriv: StabilityDerivatives, params: VehicleParams) -> dict:
    """Weighted second derivatives sum_c mult[..., c] * d2 f_c / d(state,input)2.

    Returns the nonzero entries only, keyed by index pair; used by the
    transcription to assemble the Lagrangian Hessian. Entries are the
    upper-triangle representatives (i <= j in the combined [state; input]
    ordering with delta at combined index 7).
    """
    m, iz = params.mass, params.inertia_z
    r = states[..., IR]
    beta = states[..., IBETA]
    v = states[..., IV]
    theta = states[..., ITHETA]
    delta = controls[..., IDELTA]
    mu_r = mult[..., IR]
    mu_b = mult[..., IBETA]
    mu_x = mult[..., IX]
    mu_y = mult[..., IY]
    inv_v2 = 1.0 / (v * v)
    inv_v3 = inv_v2 / v
    inv_v4 = inv_v2 * inv_v2
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    return {
        (IR, IV): mu_r * (-deriv.n_r / iz * inv_v2)
        + mu_b * (-2.0 * deriv.y_r / m * inv_v3),
        (IBETA, IV): mu_b * (-deriv.y_beta / m * inv_v2),
        (IV, IV): mu_r * (2.0 * deriv.n_r / iz * r * inv_v3)
        + mu_b * (6.0 * deriv.y_r / m * r * inv_v4
                  + 2.0 * (deriv.y_beta * beta + deriv.y_delta * delta)
                  / m * inv_v3),
        (IV, ITHETA): mu_x * (-sin_t) + mu_y * cos_t,
        (ITHETA, ITHETA): mu_x * (-v * cos_t) + mu_y * (-v * sin_t),
        # cross term with the steering input (combined index 6 + IDELTA)
        (IV, STATE_DIM + IDELTA): mu_b * (-deriv.y_delta / m * inv_v2),
    }


def check_limits(state: VehicleState, control: ControlInput,
                 bounds: StateBounds) -> list[LimitViolation]:
    """Report every violated box limit with its signed overshoot."""
    checks = [
        ("V_min", state.v, bounds.v_min, bounds.v_min - state.v),
        ("V_max", state.v, bounds.v_max, state.v - bounds.v_max),
        ("a_max", control.accel, bounds.a_max, abs(control.accel) - bounds.a_max),
        ("delta_max", control.steer, bounds.delta_max,
         abs(control.steer) - bounds.delta_max),
        ("r_max", state.r, bounds.r_max, abs(state.r) - bounds.r_max),
        ("beta_max", state.beta, bounds.beta_max,
         abs(state.beta) - bounds.beta_max),
    ]
    return [LimitViolation(name, val, bound, margin)
            for name, val, bound, margin in checks if margin > 0.0]
