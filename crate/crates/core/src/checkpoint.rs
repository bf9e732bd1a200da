//! Binary checkpoints for both model families.
//!
//! Layout, all integers `u32` and all floats `f64`, little-endian:
//!
//! ```text
//! RegFlow: "RGFL" version c d n_h h.. n_f f.. S t0 t1 output_scale scaling P psi[P]
//! MDN:     "RGMD" version c d k head n_h h.. scaling P weights[P]
//! ```
//!
//! `scaling` is `x_shift[c] x_scale[c] y_shift[d] y_scale[d]`, and `P` is a
//! `u64`. Every checkpoint has a sibling `.meta` text file echoing the header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::{Graph, Tensor};
use crate::config::fmt_g17;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::hypernet::{HyperConfig, HyperNet};
use crate::mdn::{Mdn, MdnConfig};
use crate::model::{ConditionVector, ConditionalModel, ModelKind, Scaling};

pub const FORMAT_VERSION: u32 = 1;
const REGFLOW_MAGIC: &[u8; 4] = b"RGFL";
const MDN_MAGIC: &[u8; 4] = b"RGMD";

/// Either model family, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    RegFlow(HyperNet<f64>),
    Mdn(Mdn<f64>),
}

impl From<HyperNet<f64>> for AnyModel {
    fn from(m: HyperNet<f64>) -> Self {
        AnyModel::RegFlow(m)
    }
}

impl From<Mdn<f64>> for AnyModel {
    fn from(m: Mdn<f64>) -> Self {
        AnyModel::Mdn(m)
    }
}

impl ConditionalModel<f64> for AnyModel {
    fn kind(&self) -> ModelKind {
        match self {
            AnyModel::RegFlow(m) => m.kind(),
            AnyModel::Mdn(m) => m.kind(),
        }
    }

    fn cond_dim(&self) -> usize {
        match self {
            AnyModel::RegFlow(m) => m.cond_dim(),
            AnyModel::Mdn(m) => m.cond_dim(),
        }
    }

    fn target_dim(&self) -> usize {
        match self {
            AnyModel::RegFlow(m) => m.target_dim(),
            AnyModel::Mdn(m) => m.target_dim(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            AnyModel::RegFlow(m) => m.params(),
            AnyModel::Mdn(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyModel::RegFlow(m) => m.params_mut(),
            AnyModel::Mdn(m) => m.params_mut(),
        }
    }

    fn log_prob_graph<G: Graph<f64>>(
        &self,
        g: &mut G,
        params: &G::Var,
        xs: &Tensor<f64>,
        ys: &Tensor<f64>,
    ) -> Result<G::Var> {
        match self {
            AnyModel::RegFlow(m) => m.log_prob_graph(g, params, xs, ys),
            AnyModel::Mdn(m) => m.log_prob_graph(g, params, xs, ys),
        }
    }

    fn sample(&self, x: &ConditionVector<f64>, n: usize, seed: u64) -> Result<Tensor<f64>> {
        match self {
            AnyModel::RegFlow(m) => m.sample(x, n, seed),
            AnyModel::Mdn(m) => m.sample(x, n, seed),
        }
    }

    fn eval_chunk(&self) -> usize {
        match self {
            AnyModel::RegFlow(m) => m.eval_chunk(),
            AnyModel::Mdn(m) => m.eval_chunk(),
        }
    }

    fn log_prob_at(&self, x: &ConditionVector<f64>, ys: &Tensor<f64>) -> Result<Vec<f64>> {
        match self {
            AnyModel::RegFlow(m) => m.log_prob_at(x, ys),
            AnyModel::Mdn(m) => m.log_prob_at(x, ys),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit the header")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn widths(&mut self, w: &[usize]) -> Result<()> {
        self.u32(w.len())?;
        w.iter().try_for_each(|&v| self.u32(v))
    }

    fn floats(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }

    fn scaling(&mut self, s: &Scaling<f64>) {
        self.floats(&s.x_shift);
        self.floats(&s.x_scale);
        self.floats(&s.y_shift);
        self.floats(&s.y_scale);
    }

    fn params(&mut self, p: &[f64]) {
        self.0.extend_from_slice(&(p.len() as u64).to_le_bytes());
        self.floats(p);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn scaling(&mut self, c: usize, d: usize) -> Result<Scaling<f64>> {
        Ok(Scaling {
            x_shift: self.floats(c)?,
            x_scale: self.floats(c)?,
            y_shift: self.floats(d)?,
            y_scale: self.floats(d)?,
        })
    }

    fn params(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n.saturating_mul(8) != self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!(
                "header announces {n} parameters but {} bytes remain",
                self.bytes.len() - self.pos
            )));
        }
        self.floats(n)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn join_f(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_g17(x)).collect::<Vec<_>>().join(",")
}

impl AnyModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        match self {
            AnyModel::RegFlow(m) => {
                let (h, f) = (m.config(), m.flow_config());
                w.0.extend_from_slice(REGFLOW_MAGIC);
                w.u32(FORMAT_VERSION as usize)?;
                w.u32(h.cond_dim)?;
                w.u32(f.target_dim)?;
                w.widths(&h.hidden_widths)?;
                w.widths(&f.hidden_widths)?;
                w.u32(f.rk4_steps)?;
                w.f64(f.t0);
                w.f64(f.t1);
                w.f64(h.output_scale);
                w.scaling(m.scaling());
                w.params(m.psi());
            }
            AnyModel::Mdn(m) => {
                let c = m.config();
                w.0.extend_from_slice(MDN_MAGIC);
                w.u32(FORMAT_VERSION as usize)?;
                w.u32(c.cond_dim)?;
                w.u32(c.target_dim)?;
                w.u32(c.components)?;
                w.u32(c.head_width())?;
                w.widths(&c.hidden_widths)?;
                w.scaling(m.scaling());
                w.params(m.params());
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        let is_flow = match magic {
            m if m == REGFLOW_MAGIC => true,
            m if m == MDN_MAGIC => false,
            _ => return Err(Error::Checkpoint("unrecognized magic; expected RGFL or RGMD".into())),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let c = r.u32()?;
        let d = r.u32()?;
        if is_flow {
            let hyper_widths = r.widths()?;
            let flow_widths = r.widths()?;
            let rk4_steps = r.u32()?;
            let (t0, t1, output_scale) = (r.f64()?, r.f64()?, r.f64()?);
            let scaling = r.scaling(c, d)?;
            let psi = r.params()?;
            let hyper = HyperConfig { cond_dim: c, hidden_widths: hyper_widths, output_scale };
            let flow = FlowConfig { target_dim: d, hidden_widths: flow_widths, t0, t1, rk4_steps, ..FlowConfig::default() };
            Ok(AnyModel::RegFlow(HyperNet::from_parts(hyper, flow, scaling, psi)?))
        } else {
            let k = r.u32()?;
            let head = r.u32()?;
            let widths = r.widths()?;
            let config = MdnConfig { cond_dim: c, target_dim: d, components: k, hidden_widths: widths };
            if config.head_width() != head {
                return Err(Error::Checkpoint(format!(
                    "head width {head} disagrees with k = {k}, d = {d}"
                )));
            }
            let scaling = r.scaling(c, d)?;
            let weights = r.params()?;
            Ok(AnyModel::Mdn(Mdn::from_parts(config, scaling, weights)?))
        }
    }

    /// Human-readable echo of the header.
    pub fn metadata(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format_version={FORMAT_VERSION}");
        let _ = writeln!(s, "model={}", self.kind().name());
        let _ = writeln!(s, "cond_dim={}", self.cond_dim());
        let _ = writeln!(s, "target_dim={}", self.target_dim());
        let scaling = match self {
            AnyModel::RegFlow(m) => {
                let (h, f) = (m.config(), m.flow_config());
                let _ = writeln!(s, "magic=RGFL");
                let _ = writeln!(s, "hyper_widths={}", join(&h.hidden_widths));
                let _ = writeln!(s, "flow_widths={}", join(&f.hidden_widths));
                let _ = writeln!(s, "rk4_steps={}", f.rk4_steps);
                let _ = writeln!(s, "t0={}", fmt_g17(f.t0));
                let _ = writeln!(s, "t1={}", fmt_g17(f.t1));
                let _ = writeln!(s, "output_scale={}", fmt_g17(h.output_scale));
                m.scaling()
            }
            AnyModel::Mdn(m) => {
                let c = m.config();
                let _ = writeln!(s, "magic=RGMD");
                let _ = writeln!(s, "components={}", c.components);
                let _ = writeln!(s, "head_width={}", c.head_width());
                let _ = writeln!(s, "hidden_widths={}", join(&c.hidden_widths));
                m.scaling()
            }
        };
        let _ = writeln!(s, "x_shift={}", join_f(&scaling.x_shift));
        let _ = writeln!(s, "x_scale={}", join_f(&scaling.x_scale));
        let _ = writeln!(s, "y_shift={}", join_f(&scaling.y_shift));
        let _ = writeln!(s, "y_scale={}", join_f(&scaling.y_scale));
        let _ = writeln!(s, "param_count={}", self.params().len());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        std::fs::write(meta_path(path), self.metadata())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regflow_round_trip_is_exact() {
        let flow = FlowConfig::desk(2);
        let m = HyperNet::init(HyperConfig::new(3), flow, 7).unwrap();
        let s = Scaling { x_shift: vec![0.5, -1.0, 2.0], x_scale: vec![1.5, 2.0, 0.25], y_shift: vec![0.1, 0.2], y_scale: vec![3.0, 3.0] };
        let m = AnyModel::from(m.with_scaling(s).unwrap());
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RGFL");
        assert_eq!(AnyModel::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn mdn_round_trip_is_exact() {
        let m = AnyModel::from(Mdn::<f64>::init(MdnConfig::new(1, 1, 8), 3).unwrap());
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RGMD");
        assert_eq!(AnyModel::from_bytes(&bytes).unwrap(), m);
        assert!(m.metadata().contains("components=8"));
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = AnyModel::from(Mdn::<f64>::init(MdnConfig::new(1, 1, 2), 3).unwrap());
        let bytes = m.to_bytes().unwrap();
        assert!(AnyModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(AnyModel::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(AnyModel::from_bytes(&bad).is_err());
    }
}
