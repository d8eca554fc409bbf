//! Bundled network cases: a 36-bus single-phase feeder patterned on the
//! IEEE 37-node test feeder (substation + 35 buses, 4.8 kV / 2.5 MVA base)
//! and a 4-bus radial pilot feeder used for fast experiments.
//!
//! Branch constants approximate the published feeder; consumers must rely on
//! internal consistency (assembled Y, power-flow round trips), not on exact
//! admittance values.

use crate::grid::{CaseFile, GridModel};
use crate::Result;

pub const IEEE37_JSON: &str = include_str!("../cases/ieee37.json");
pub const CASE4_JSON: &str = include_str!("../cases/case4.json");

/// 36-bus feeder, slack at bus 0 (the substation).
pub fn ieee37() -> Result<GridModel> {
    CaseFile::from_json(IEEE37_JSON)?.to_grid()
}

/// 4-bus radial pilot feeder, slack at bus 0.
pub fn case4() -> Result<GridModel> {
    CaseFile::from_json(CASE4_JSON)?.to_grid()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_load() {
        let g37 = ieee37().unwrap();
        assert_eq!(g37.n_buses(), 36);
        assert_eq!(g37.slack_index(), 0);
        assert_eq!(g37.base_voltage_kv, 4.8);

        let g4 = case4().unwrap();
        assert_eq!(g4.n_buses(), 4);
    }

    #[test]
    fn ieee37_y_symmetric() {
        let g = ieee37().unwrap();
        for i in 0..36 {
            for j in 0..i {
                assert_eq!(g.y(i, j), g.y(j, i));
            }
        }
    }
}
