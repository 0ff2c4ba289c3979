//! Deliberate formula corruptions, used to confirm the verification
//! harness notices when the construction is wrong.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Faults {
    /// Omit the constant `(μ − ν)C` coupling from the slice matrix `A`.
    pub drop_coupling_term: bool,
    /// Use the opposite parity bracket in the orbit component of the
    /// `χ_k` Hamiltonian vector field.
    pub flip_orbit_bracket: bool,
}

impl Faults {
    pub const NONE: Faults = Faults {
        drop_coupling_term: false,
        flip_orbit_bracket: false,
    };

    pub fn any(&self) -> bool {
        self.drop_coupling_term || self.flip_orbit_bracket
    }

    /// Parse a fault name as accepted on the command line.
    pub fn from_name(name: &str) -> Option<Faults> {
        match name {
            "none" => Some(Faults::NONE),
            "drop-coupling" => Some(Faults {
                drop_coupling_term: true,
                ..Faults::NONE
            }),
            "flip-orbit-sign" => Some(Faults {
                flip_orbit_bracket: true,
                ..Faults::NONE
            }),
            _ => None,
        }
    }
}
