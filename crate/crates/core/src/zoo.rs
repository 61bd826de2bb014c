//! The standard model set: master classifier, five zone regressors and the
//! single-model baseline, built for one input resolution.

use crate::error::Result;
use crate::models::{build_baseline, build_mcn, build_srn, ModelSpec, ZONE_COUNT};

pub const MODEL_NAMES: [&str; 7] = [
    "mcn",
    "srn_zone1",
    "srn_zone2",
    "srn_zone3",
    "srn_zone4",
    "srn_zone5",
    "baseline",
];

pub struct ModelSet {
    pub mcn: ModelSpec,
    pub srns: Vec<ModelSpec>,
    pub baseline: ModelSpec,
}

impl ModelSet {
    pub fn build(input_shape: [usize; 3]) -> Result<Self> {
        let mcn = build_mcn(input_shape)?;
        let srns = (1..=ZONE_COUNT)
            .map(|z| build_srn(z, input_shape))
            .collect::<Result<Vec<_>>>()?;
        let baseline = build_baseline(input_shape)?;
        Ok(ModelSet {
            mcn,
            srns,
            baseline,
        })
    }

    pub fn by_name(&self, name: &str) -> Option<&ModelSpec> {
        match name {
            "mcn" => Some(&self.mcn),
            "baseline" => Some(&self.baseline),
            _ => name
                .strip_prefix("srn_zone")
                .and_then(|z| z.parse::<usize>().ok())
                .filter(|z| (1..=ZONE_COUNT).contains(z))
                .map(|z| &self.srns[z - 1]),
        }
    }
}
