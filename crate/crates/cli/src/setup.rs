//! Model construction from `key=value` training configs.

use std::fmt::Write as _;

use regflow::checkpoint::AnyModel;
use regflow::config::{field_error, fmt_g17, KeyValues};
use regflow::data::Dataset;
use regflow::flow::FlowConfig;
use regflow::hypernet::{HyperConfig, HyperNet};
use regflow::mdn::{Mdn, MdnConfig};
use regflow::model::{ModelKind, Scaling};
use regflow::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper_widths: Vec<usize>,
    pub flow_widths: Vec<usize>,
    pub rk4_steps: usize,
    pub t0: f64,
    pub t1: f64,
    pub output_scale: f64,
    pub components: usize,
    pub mdn_widths: Vec<usize>,
    pub init_seed: u64,
    pub standardize: bool,
    pub target_spread: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        let flow = FlowConfig::<f64>::desk(1);
        let hyper = HyperConfig::<f64>::new(1);
        Self {
            kind,
            hyper_widths: hyper.hidden_widths,
            flow_widths: flow.hidden_widths,
            rk4_steps: flow.rk4_steps,
            t0: flow.t0,
            t1: flow.t1,
            output_scale: hyper.output_scale,
            components: 8,
            mdn_widths: vec![64, 64],
            init_seed: 0,
            standardize: true,
            target_spread: 4.0,
        }
    }

    pub fn from_kv(kv: &KeyValues, kind: ModelKind) -> Result<Self> {
        let d = Self::new(kind);
        let spec = Self {
            kind,
            hyper_widths: kv.get_list("hyper_widths")?.unwrap_or(d.hyper_widths),
            flow_widths: kv.get_list("flow_widths")?.unwrap_or(d.flow_widths),
            rk4_steps: kv.get_or("rk4_steps", d.rk4_steps)?,
            t0: kv.get_or("t0", d.t0)?,
            t1: kv.get_or("t1", d.t1)?,
            output_scale: kv.get_or("output_scale", d.output_scale)?,
            components: kv.get_or("components", d.components)?,
            mdn_widths: kv.get_list("mdn_widths")?.unwrap_or(d.mdn_widths),
            init_seed: kv.get_or("init_seed", d.init_seed)?,
            standardize: kv.get_or("standardize", d.standardize)?,
            target_spread: kv.get_or("target_spread", d.target_spread)?,
        };
        if !(spec.target_spread > 0.0 && spec.target_spread.is_finite()) {
            return Err(field_error(kv, "target_spread", "must be positive"));
        }
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.kind.name());
        match self.kind {
            ModelKind::RegFlow => {
                let _ = writeln!(s, "hyper_widths={}", join(&self.hyper_widths));
                let _ = writeln!(s, "flow_widths={}", join(&self.flow_widths));
                let _ = writeln!(s, "rk4_steps={}", self.rk4_steps);
                let _ = writeln!(s, "t0={}", fmt_g17(self.t0));
                let _ = writeln!(s, "t1={}", fmt_g17(self.t1));
                let _ = writeln!(s, "output_scale={}", fmt_g17(self.output_scale));
            }
            ModelKind::Mdn => {
                let _ = writeln!(s, "components={}", self.components);
                let _ = writeln!(s, "mdn_widths={}", join(&self.mdn_widths));
            }
        }
        let _ = writeln!(s, "init_seed={}", self.init_seed);
        let _ = writeln!(s, "standardize={}", self.standardize);
        let _ = writeln!(s, "target_spread={}", fmt_g17(self.target_spread));
        s
    }

    /// Seeded initialization sized for the dataset, with scaling fitted to
    /// its pairs when `standardize` is set.
    pub fn build(&self, data: &Dataset) -> Result<AnyModel> {
        let (c, d) = (data.cond_dim(), data.target_dim());
        let scaling = if self.standardize {
            Scaling::fit_with_spread(data.xs(), data.ys(), self.target_spread)
        } else {
            Scaling::identity(c, d)
        };
        Ok(match self.kind {
            ModelKind::RegFlow => {
                let flow = FlowConfig {
                    target_dim: d,
                    hidden_widths: self.flow_widths.clone(),
                    t0: self.t0,
                    t1: self.t1,
                    rk4_steps: self.rk4_steps,
                    ..FlowConfig::default()
                };
                let hyper = HyperConfig { cond_dim: c, hidden_widths: self.hyper_widths.clone(), output_scale: self.output_scale };
                AnyModel::RegFlow(HyperNet::init(hyper, flow, self.init_seed)?.with_scaling(scaling)?)
            }
            ModelKind::Mdn => {
                let config = MdnConfig { cond_dim: c, target_dim: d, components: self.components, hidden_widths: self.mdn_widths.clone() };
                AnyModel::Mdn(Mdn::init(config, self.init_seed)?.with_scaling(scaling)?)
            }
        })
    }
}
