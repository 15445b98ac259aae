use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating scalar the numeric core is generic over.
///
/// The pipeline and CLI pin this to f64 through the aliases at the crate
/// root; f32 instantiations exist for callers that trade precision for
/// footprint. All randomness is drawn as f64 and converted through `of`, so
/// both widths consume identical random streams.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in any Scalar")
    }

    fn to64(self) -> f64 {
        self.to_f64().expect("any Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
