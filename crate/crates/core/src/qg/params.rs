use crate::error::{Error, Result};

/// How the background-shear PV gradient enters the linear terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PvGradient {
    /// `beta_1 = beta + F1 (U1 - U2)`, `beta_2 = beta - F2 (U1 - U2)`.
    Effective,
    /// Plain `beta` in both layers, exactly as written in the layer equations.
    Literal,
}

/// Which physical scalars are differentiable leaves during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub delta: bool,
    pub u1: bool,
}

impl Trainable {
    pub const BOTH: Trainable = Trainable {
        delta: true,
        u1: true,
    };
    pub const NONE: Trainable = Trainable {
        delta: false,
        u1: false,
    };
}

/// Two-layer QG constants (SI units) and grid/timestep configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    /// Planetary vorticity gradient, 1/(m s).
    pub beta: f64,
    /// Linear bottom drag, 1/s.
    pub r_ek: f64,
    /// Deformation radius, m.
    pub r_d: f64,
    pub u1: f64,
    pub u2: f64,
    /// Layer thickness ratio H1/H2.
    pub delta: f64,
    pub domain_length: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub trainable: Trainable,
    pub pv_gradient: PvGradient,
    /// Nonlinear advection `J(psi, q)`; switched off only for linear-dynamics checks.
    pub advection: bool,
}

impl PhysicalParams {
    pub const BETA: f64 = 1.5e-11;
    pub const R_EK: f64 = 5.787e-7;
    pub const R_D: f64 = 1.5e4;
    pub const U1: f64 = 2.5e-2;
    pub const U2: f64 = 0.0;
    pub const DELTA: f64 = 0.25;
    pub const DOMAIN_LENGTH: f64 = 1.0e6;
    pub const DT: f64 = 3600.0;

    /// Ground-truth constants on an `n x n` grid with a one-hour step.
    pub fn truth(n: usize) -> Self {
        Self {
            beta: Self::BETA,
            r_ek: Self::R_EK,
            r_d: Self::R_D,
            u1: Self::U1,
            u2: Self::U2,
            delta: Self::DELTA,
            domain_length: Self::DOMAIN_LENGTH,
            nx: n,
            ny: n,
            dt: Self::DT,
            trainable: Trainable::BOTH,
            pv_gradient: PvGradient::Effective,
            advection: true,
        }
    }

    /// Same physics on a different square grid.
    pub fn with_grid(&self, n: usize) -> Self {
        Self {
            nx: n,
            ny: n,
            ..self.clone()
        }
    }

    pub fn with_theta(&self, delta: f64, u1: f64) -> Self {
        Self {
            delta,
            u1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad(format!("delta must be > 0, got {}", self.delta));
        }
        if !(self.r_d > 0.0) {
            return bad(format!("r_d must be > 0, got {}", self.r_d));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.domain_length > 0.0) {
            return bad(format!("domain length must be > 0, got {}", self.domain_length));
        }
        if self.nx < 4 || self.nx % 2 != 0 || self.ny % 2 != 0 {
            return bad(format!("grid must be even and >= 4, got {}x{}", self.nx, self.ny));
        }
        if self.nx != self.ny {
            return bad(format!("only square grids are supported, got {}x{}", self.nx, self.ny));
        }
        if ![self.beta, self.r_ek, self.u1, self.u2].iter().all(|v| v.is_finite()) {
            return bad("non-finite physical constant".into());
        }
        Ok(())
    }

    /// Upper-layer coupling `1 / (r_d^2 (1 + delta))`.
    pub fn f1(&self) -> f64 {
        1.0 / (self.r_d * self.r_d * (1.0 + self.delta))
    }

    /// Lower-layer coupling `delta / (r_d^2 (1 + delta))`.
    pub fn f2(&self) -> f64 {
        self.delta * self.f1()
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.nx as f64
    }

    /// Thickness weights `(delta/(1+delta), 1/(1+delta))` with unit total depth.
    pub fn layer_weights(&self) -> [f64; 2] {
        [self.delta / (1.0 + self.delta), 1.0 / (1.0 + self.delta)]
    }
}
