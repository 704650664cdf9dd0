use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::degradation::{DegradationRecipe, HazeParams, RaindropParams, SnowParams, StreakParams};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Haze density tiers as scattering coefficients per unit of normalized depth.
pub const HAZE_LIGHT: f32 = 0.4;
pub const HAZE_MODERATE: f32 = 0.8;
pub const HAZE_HEAVY: f32 = 1.6;

/// The six evaluated degradation mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CaseId {
    /// Rain streaks.
    Streaks,
    /// Rain streaks and snow.
    StreaksSnow,
    /// Rain streaks under light haze.
    StreaksLightHaze,
    /// Rain streaks under heavy haze.
    StreaksHeavyHaze,
    /// Rain streaks, moderate haze and raindrops.
    StreaksHazeRaindrops,
    /// Rain streaks, snow, moderate haze and raindrops.
    All,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Streaks,
        CaseId::StreaksSnow,
        CaseId::StreaksLightHaze,
        CaseId::StreaksHeavyHaze,
        CaseId::StreaksHazeRaindrops,
        CaseId::All,
    ];

    /// 1-based case number.
    pub fn number(self) -> u8 {
        CaseId::ALL.iter().position(|c| *c == self).expect("listed") as u8 + 1
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1..=6 => Ok(CaseId::ALL[n as usize - 1]),
            _ => Err(Error::param(format!("case {n} outside 1..=6"))),
        }
    }

    pub fn haze_beta(self) -> Option<f32> {
        match self {
            CaseId::StreaksLightHaze => Some(HAZE_LIGHT),
            CaseId::StreaksHeavyHaze => Some(HAZE_HEAVY),
            CaseId::StreaksHazeRaindrops | CaseId::All => Some(HAZE_MODERATE),
            CaseId::Streaks | CaseId::StreaksSnow => None,
        }
    }

    pub fn has_snow(self) -> bool {
        matches!(self, CaseId::StreaksSnow | CaseId::All)
    }

    pub fn has_raindrops(self) -> bool {
        matches!(self, CaseId::StreaksHazeRaindrops | CaseId::All)
    }
}

impl TryFrom<u8> for CaseId {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        CaseId::from_number(n)
    }
}

impl From<CaseId> for u8 {
    fn from(c: CaseId) -> u8 {
        c.number()
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Recipe for one case. Generator parameters are sized for 32×32 desk-scale
/// images; the streak angle is drawn per recipe.
pub fn case_recipe(case: CaseId, seed: u64) -> DegradationRecipe {
    let mut rng = rng_from_seed(derive_seed(seed, stream::RECIPE));
    let mut r = DegradationRecipe::empty(seed);
    r.streaks = Some(StreakParams {
        count: 10,
        length_px: 10.0,
        angle_deg: rng.random_range(70.0..110.0),
        thickness_px: 1.0,
    });
    if case.has_snow() {
        r.snow = Some(SnowParams {
            flake_count: 8,
            radius_range_px: (0.6, 1.6),
        });
    }
    if case.has_raindrops() {
        r.raindrops = Some(RaindropParams {
            drop_count: 4,
            radius_range_px: (1.5, 3.5),
            metaball_threshold: 1.0,
        });
    }
    r.haze = case.haze_beta().map(|beta| HazeParams {
        beta,
        depth_source: Default::default(),
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::MaskKind;

    #[test]
    fn case_components() {
        let c1 = case_recipe(CaseId::Streaks, 1);
        assert!(c1.haze.is_none() && c1.snow.is_none() && c1.raindrops.is_none());
        assert_eq!(c1.mask_degradation_count(), 1);

        let c4 = case_recipe(CaseId::StreaksHeavyHaze, 1);
        assert_eq!(c4.haze.as_ref().unwrap().beta, HAZE_HEAVY);
        assert_eq!(c4.mask_degradation_count(), 1);

        let c6 = case_recipe(CaseId::All, 1);
        assert_eq!(c6.mask_degradation_count(), 3);
        assert_eq!(c6.haze.as_ref().unwrap().beta, HAZE_MODERATE);
        assert!(c6.is_enabled(MaskKind::Snow) && c6.is_enabled(MaskKind::Raindrops));
        for case in CaseId::ALL {
            case_recipe(case, 9).validate().unwrap();
        }
    }

    #[test]
    fn numbering_round_trips() {
        for (i, c) in CaseId::ALL.iter().enumerate() {
            assert_eq!(c.number() as usize, i + 1);
            assert_eq!(CaseId::from_number(c.number()).unwrap(), *c);
            let json = serde_json::to_string(c).unwrap();
            assert_eq!(json, format!("{}", i + 1));
        }
        assert!(CaseId::from_number(0).is_err());
        assert!(serde_json::from_str::<CaseId>("7").is_err());
    }
}
