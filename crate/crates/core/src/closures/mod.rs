//! Sub-grid closures: the convolutional network, the Smagorinsky baseline and no closure.

mod cnn;
mod smagorinsky;

pub use cnn::{cnn_forward, init_cnn, init_cnn_with, CnnArch, CnnParams, CnnVars, Normalization};
pub use smagorinsky::{smagorinsky, smagorinsky_with_velocity, SmagorinskyParams};

use crate::autodiff::Tape;
use crate::error::Result;
use crate::qg::{Closure, NoClosure, TapeClosure};

/// One of the closure variants compared in evaluation.
#[derive(Clone, Debug)]
pub enum ClosureKind {
    None,
    Smagorinsky(SmagorinskyParams),
    Cnn(CnnParams),
}

impl Closure for ClosureKind {
    fn bind<'a>(&'a self, tape: &mut Tape) -> Result<Box<dyn TapeClosure + 'a>> {
        match self {
            ClosureKind::None => NoClosure.bind(tape),
            ClosureKind::Smagorinsky(s) => s.bind(tape),
            ClosureKind::Cnn(c) => c.bind(tape),
        }
    }
}
