use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::directional::norm;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::head::{sample_next_token, CfgSchedule, StepDiag};
use super::sequence::TokenSequence;
use super::transformer::{ArModel, KvCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefeedMode {
    /// Feed `N_R(z)` back.
    Projected,
    /// Feed the Euler endpoint back unnormalised.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub n_steps: usize,
    pub cfg: CfgSchedule,
    pub refeed: RefeedMode,
    pub use_cache: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            n_steps: 100,
            cfg: CfgSchedule::none(),
            refeed: RefeedMode::Projected,
            use_cache: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeDiag {
    #[serde(flatten)]
    pub step: StepDiag,
    /// Norm of the vector fed to the next AR step.
    pub refed_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub class_id: Option<usize>,
    pub grid: (usize, usize),
    pub radius: f64,
    /// Euler endpoints before projection.
    pub raw: Vec<Vec<f64>>,
    pub projected: Vec<Vec<f64>>,
    pub diagnostics: Vec<DecodeDiag>,
}

impl DecodeOutput {
    pub fn projected_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.projected.clone(), self.grid, self.radius, self.class_id)
    }

    pub fn raw_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.raw.clone(), self.grid, 0.0, self.class_id)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,pre_norm,post_norm,refed_norm,guard,cfg_scale\n");
        for d in &self.diagnostics {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{},{}\n",
                d.step.step, d.step.pre_norm, d.step.post_norm, d.refed_norm, d.step.guard_fired as u8, d.step.cfg_scale
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Conditional and (when guided) unconditional streams over the same inputs.
struct Context<'a> {
    model: &'a ArModel,
    use_cache: bool,
    row: usize,
    cache: KvCache,
    inputs: Vec<Vec<f64>>,
}

impl<'a> Context<'a> {
    fn new(model: &'a ArModel, row: usize, use_cache: bool) -> Self {
        Self {
            model,
            use_cache,
            row,
            cache: KvCache::default(),
            inputs: vec![],
        }
    }

    fn push(&mut self, token: Option<&[f64]>) -> Option<Vec<f64>> {
        let i = self.inputs.len().max(self.cache.len());
        let input = self.model.input_row(i, self.row, token);
        if self.use_cache {
            self.inputs.clear();
            Some(self.model.step(&mut self.cache, &input))
        } else {
            self.inputs.push(input);
            None
        }
    }

    /// Feed conditioning slots (`token = None`) or a token, returning the last hidden state.
    fn feed(&mut self, token: Option<&[f64]>) -> Vec<f64> {
        match self.push(token) {
            Some(h) => h,
            None => self.model.forward_full(&self.inputs).pop().expect("non-empty"),
        }
    }
}

/// Autoregressive decode of one `h × w` sequence.
pub fn decode_sequence(model: &ArModel, class_id: Option<usize>, opts: &DecodeOptions, rng: &mut Rng) -> Result<DecodeOutput> {
    let cfg = &model.config;
    let row = model.class_row(class_id)?;
    let guided = opts.cfg.is_guided() && class_id.is_some();
    let mut cond = Context::new(model, row, opts.use_cache);
    let mut uncond = guided.then(|| Context::new(model, model.null_class(), opts.use_cache));
    let (mut h, mut hu) = (vec![], None);
    for _ in 0..cfg.cond_tokens {
        h = cond.feed(None);
        hu = uncond.as_mut().map(|u| u.feed(None));
    }
    let l = cfg.seq_len();
    let radius = cfg.radius();
    let mut out = DecodeOutput {
        class_id,
        grid: (cfg.grid_h, cfg.grid_w),
        radius,
        raw: vec![],
        projected: vec![],
        diagnostics: vec![],
    };
    for k in 0..l {
        let s = if guided { opts.cfg.scale_at(k, l) } else { 1.0 };
        let next = sample_next_token(model, cfg.token_dim, &h, hu.as_deref(), opts.n_steps, s, radius, rng)?;
        let refeed = match opts.refeed {
            RefeedMode::Projected => next.token.as_slice().to_vec(),
            RefeedMode::Raw => next.raw.clone(),
        };
        out.diagnostics.push(DecodeDiag {
            step: StepDiag { step: k, ..next.diag },
            refed_norm: norm(&refeed),
        });
        if k + 1 < l {
            h = cond.feed(Some(&refeed));
            hu = uncond.as_mut().map(|u| u.feed(Some(&refeed)));
        }
        out.raw.push(next.raw);
        out.projected.push(next.token.into_vec());
    }
    Ok(out)
}
