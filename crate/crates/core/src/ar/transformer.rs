//! Pre-norm causal transformer over `[conditioning slots, z₁ … z_{l−1}]`.
//!
//! Conditioning slots sit at 2D position (0, 0); image token `j` (0-based,
//! raster order on an `h × w` grid) sits at `(1 + j / w, 1 + j % w)`. Each
//! head splits its dimensions in half: the first half is rotated by the row
//! index, the second by the column index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, stream};
use crate::tensor::{matmul_raw, mlp_forward, rotate_pairs, softmax_row, Activation, Axis, Graph, Init, Linear, Mlp, ParamId, ParamStore, Tensor, Var};

pub const RMS_EPS: f64 = 1e-6;
const ROPE_BASE: f64 = 100.0;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub token_dim: usize,
    /// Token norm; `None` means √d.
    pub radius: Option<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub time_freqs: usize,
    pub n_classes: usize,
    pub cond_tokens: usize,
    pub class_dropout: f64,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr · lr_final_ratio` over the run.
    pub lr_final_ratio: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub zero_init_head: bool,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            token_dim: 16,
            radius: None,
            grid_h: 4,
            grid_w: 4,
            width: 128,
            blocks: 4,
            heads: 4,
            ffn_mult: 2,
            head_hidden: 128,
            head_layers: 3,
            time_freqs: 8,
            n_classes: 4,
            cond_tokens: 16,
            class_dropout: 0.1,
            lr: 3e-3,
            lr_final_ratio: 0.05,
            weight_decay: 0.0,
            batch_size: 16,
            steps: 2000,
            seed: 0,
            zero_init_head: true,
        }
    }
}

impl ArConfig {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or((self.token_dim as f64).sqrt())
    }

    pub fn seq_len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
        let lo = self.lr * self.lr_final_ratio;
        lo + 0.5 * (self.lr - lo) * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.token_dim < 2 {
            return fail("token_dim must be >= 2".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.head_dim() % 4 != 0 {
            return fail(format!("width {} must split into {} heads with dimension divisible by 4", self.width, self.heads));
        }
        if self.seq_len() == 0 || self.cond_tokens == 0 || self.n_classes == 0 {
            return fail("grid, cond_tokens and n_classes must be positive".into());
        }
        if self.head_layers == 0 || self.batch_size == 0 || self.ffn_mult == 0 {
            return fail("head_layers, batch_size and ffn_mult must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.class_dropout) {
            return fail(format!("class_dropout {} outside [0, 1]", self.class_dropout));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.lr_final_ratio) {
            return fail(format!("lr {} / lr_final_ratio {} out of range", self.lr, self.lr_final_ratio));
        }
        if !(self.radius() > 0.0) {
            return fail("radius must be positive".into());
        }
        Ok(())
    }

    /// 2D position of sequence row `i`.
    pub fn position(&self, i: usize) -> (usize, usize) {
        if i < self.cond_tokens {
            (0, 0)
        } else {
            let j = i - self.cond_tokens;
            (1 + j / self.grid_w, 1 + j % self.grid_w)
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm2: ParamId,
    ffn: Mlp,
}

#[derive(Debug, Clone)]
pub struct ArModel {
    pub config: ArConfig,
    pub store: ParamStore,
    embed: Linear,
    class_table: ParamId,
    slots: ParamId,
    blocks: Vec<Block>,
    norm_f: ParamId,
    pub head: Mlp,
}

/// Per-layer keys and values of the rows processed so far.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    rows: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

fn rope_angles(cfg: &ArConfig, pos: (usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let hd = cfg.head_dim();
    let quarter = hd / 4;
    let mut cos = Vec::with_capacity(hd / 2);
    let mut sin = Vec::with_capacity(hd / 2);
    for (axis_pos, _) in [(pos.0, 0), (pos.1, 1)] {
        for i in 0..quarter {
            let freq = ROPE_BASE.powf(-(i as f64) / quarter as f64);
            let a = axis_pos as f64 * freq;
            cos.push(a.cos());
            sin.push(a.sin());
        }
    }
    (cos, sin)
}

/// Rotation tables for `rows` rows starting at row `start`, one head.
fn rope_tables(cfg: &ArConfig, start: usize, rows: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cos = vec![];
    let mut sin = vec![];
    for i in start..start + rows {
        let (c, s) = rope_angles(cfg, cfg.position(i));
        cos.extend(c);
        sin.extend(s);
    }
    (cos, sin)
}

fn rms_norm_row(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let n = (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v / n * g).collect()
}

impl ArModel {
    pub fn new(config: ArConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(child_seed(config.seed, "ar-init"), 0);
        let mut store = ParamStore::new();
        let w = config.width;
        let d = config.token_dim;
        let embed = Linear::new(&mut store, "ar.embed", d, w, true, Init::LeCun, &mut rng);
        let gauss = |rng: &mut crate::rng::Rng, n: usize, s: f64| {
            use rand::Rng as _;
            (0..n).map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect::<Vec<f64>>()
        };
        let class_table = store.add("ar.class_table", Tensor::new(vec![config.n_classes + 1, w], gauss(&mut rng, (config.n_classes + 1) * w, 1.0))?);
        let slots = store.add("ar.slots", Tensor::new(vec![config.cond_tokens, w], gauss(&mut rng, config.cond_tokens * w, 0.1))?);
        let mut blocks = vec![];
        for b in 0..config.blocks {
            let name = |s: &str| format!("ar.block{b}.{s}");
            let norm1 = store.add(name("norm1"), Tensor::full(&[w], 1.0));
            let mut proj = |s: &str, rng: &mut crate::rng::Rng| Linear::new(&mut store, &name(s), w, w, false, Init::LeCun, rng).weight;
            let wq = proj("wq", &mut rng);
            let wk = proj("wk", &mut rng);
            let wv = proj("wv", &mut rng);
            let wo = proj("wo", &mut rng);
            let norm2 = store.add(name("norm2"), Tensor::full(&[w], 1.0));
            let ffn = Mlp::new(&mut store, &name("ffn"), &[w, config.ffn_mult * w, w], Activation::Silu, false, &mut rng);
            blocks.push(Block {
                norm1,
                wq,
                wk,
                wv,
                wo,
                norm2,
                ffn,
            });
        }
        let norm_f = store.add("ar.norm_f", Tensor::full(&[w], 1.0));
        let head_in = d + 2 * config.time_freqs + w;
        let mut widths = vec![head_in];
        widths.extend(std::iter::repeat_n(config.head_hidden, config.head_layers - 1));
        widths.push(d);
        let head = Mlp::new(&mut store, "head", &widths, Activation::Silu, config.zero_init_head, &mut rng);
        Ok(Self {
            config,
            store,
            embed,
            class_table,
            slots,
            blocks,
            norm_f,
            head,
        })
    }

    pub fn from_checkpoint(config: ArConfig, ck: &crate::tensor::Checkpoint) -> Result<Self> {
        let mut m = Self::new(config)?;
        ck.load_params(&mut m.store)?;
        Ok(m)
    }

    pub fn null_class(&self) -> usize {
        self.config.n_classes
    }

    /// Table row for a class label, or the null row for `None`.
    pub fn class_row(&self, class_id: Option<usize>) -> Result<usize> {
        match class_id {
            None => Ok(self.null_class()),
            Some(c) if c < self.config.n_classes => Ok(c),
            Some(c) => Err(Error::UnknownClass {
                id: c,
                n_classes: self.config.n_classes,
            }),
        }
    }

    fn graph_rms(&self, g: &mut Graph, store: &ParamStore, x: Var, gain: ParamId) -> Result<Var> {
        let sq = g.mul(x, x)?;
        let ms = g.mean_last(sq);
        let ms = g.add_scalar(ms, RMS_EPS);
        let n = g.sqrt(ms)?;
        let y = g.div_col(x, n)?;
        let gv = g.param(store, gain);
        g.mul_row(y, gv)
    }

    /// Teacher-forced hidden states: for each sequence of `l` tokens, returns
    /// `h_{k−1}` for `k = 1..l` stacked into `[B·l, width]`.
    pub fn hidden_graph(&self, g: &mut Graph, store: &ParamStore, batch: &[(&[Vec<f64>], usize)]) -> Result<Var> {
        let cfg = &self.config;
        let l = cfg.seq_len();
        let c = cfg.cond_tokens;
        let seq = c + l - 1;
        let hd = cfg.head_dim();
        let table = g.param(store, self.class_table);
        let slots = g.param(store, self.slots);
        let mut rows = vec![];
        for (tokens, class_row) in batch {
            if tokens.len() != l {
                return Err(Error::shape("hidden_graph", &[tokens.len()], &[l]));
            }
            let cls = g.select_rows(table, &vec![*class_row; c])?;
            let cond = g.add(cls, slots)?;
            rows.push(cond);
            if l > 1 {
                let inp = Tensor::from_rows(&tokens[..l - 1])?;
                let inp = g.constant(inp);
                let e = self.embed.forward(g, store, inp)?;
                rows.push(e);
            }
        }
        let mut x = g.concat(&rows, Axis::Rows)?;
        let (cos, sin) = rope_tables(cfg, 0, seq);
        let mut mask = vec![0.0; seq * seq];
        for i in 0..seq {
            for j in i + 1..seq {
                mask[i * seq + j] = f64::NEG_INFINITY;
            }
        }
        let mask = g.constant(Tensor::new(vec![seq, seq], mask)?);
        let scale = 1.0 / (hd as f64).sqrt();
        for blk in &self.blocks {
            let h = self.graph_rms(g, store, x, blk.norm1)?;
            let wq = g.param(store, blk.wq);
            let wk = g.param(store, blk.wk);
            let wv = g.param(store, blk.wv);
            let q = g.matmul(h, wq)?;
            let k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let mut outs = vec![];
            for b in 0..batch.len() {
                let (r0, r1) = (b * seq, (b + 1) * seq);
                let qb = g.slice_rows(q, r0, r1)?;
                let kb = g.slice_rows(k, r0, r1)?;
                let vb = g.slice_rows(v, r0, r1)?;
                let mut heads = vec![];
                for hh in 0..cfg.heads {
                    let qh = g.slice_cols(qb, hh * hd, (hh + 1) * hd)?;
                    let kh = g.slice_cols(kb, hh * hd, (hh + 1) * hd)?;
                    let vh = g.slice_cols(vb, hh * hd, (hh + 1) * hd)?;
                    let qh = g.rotary(qh, cos.clone(), sin.clone())?;
                    let kh = g.rotary(kh, cos.clone(), sin.clone())?;
                    let qh = g.scale(qh, scale);
                    let kt = g.transpose(kh)?;
                    let s = g.matmul(qh, kt)?;
                    let s = g.add(s, mask)?;
                    let p = g.softmax_last(s);
                    heads.push(g.matmul(p, vh)?);
                }
                outs.push(g.concat(&heads, Axis::Cols)?);
            }
            let att = g.concat(&outs, Axis::Rows)?;
            let wo = g.param(store, blk.wo);
            let att = g.matmul(att, wo)?;
            x = g.add(x, att)?;
            let h2 = self.graph_rms(g, store, x, blk.norm2)?;
            let f = mlp_forward(g, store, h2, &blk.ffn)?;
            x = g.add(x, f)?;
        }
        let x = self.graph_rms(g, store, x, self.norm_f)?;
        let mut picks = vec![];
        for b in 0..batch.len() {
            picks.push(g.slice_rows(x, b * seq + c - 1, b * seq + c - 1 + l)?);
        }
        g.concat(&picks, Axis::Rows)
    }

    /// With a single-token grid no token is ever fed back, so the embedding
    /// receives an explicit zero gradient.
    pub(crate) fn fill_unused_grads(&mut self) {
        if self.config.seq_len() == 1 {
            for id in std::iter::once(self.embed.weight).chain(self.embed.bias) {
                if self.store.grad(id).is_none() {
                    let n = self.store.value(id).len();
                    self.store.accumulate_grad(id, &vec![0.0; n]);
                }
            }
        }
    }

    /// Input row for sequence position `i` (conditioning slot or embedded token).
    pub fn input_row(&self, i: usize, class_row: usize, token: Option<&[f64]>) -> Vec<f64> {
        let w = self.config.width;
        if i < self.config.cond_tokens {
            let t = &self.store.value(self.class_table).data()[class_row * w..(class_row + 1) * w];
            let s = &self.store.value(self.slots).data()[i * w..(i + 1) * w];
            t.iter().zip(s).map(|(a, b)| a + b).collect()
        } else {
            self.embed.apply(&self.store, token.expect("token row"))
        }
    }

    fn attend(&self, q: &[f64], keys: &[f64], values: &[f64], n_keys: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (w, hd) = (cfg.width, cfg.head_dim());
        let mut out = vec![0.0; w];
        for hh in 0..cfg.heads {
            let qh = &q[hh * hd..(hh + 1) * hd];
            let scores: Vec<f64> = (0..n_keys)
                .map(|j| {
                    let kj = &keys[j * w + hh * hd..j * w + (hh + 1) * hd];
                    let mut s = 0.0;
                    for (a, b) in qh.iter().zip(kj) {
                        s += a * b;
                    }
                    s
                })
                .collect();
            let mut p = Vec::with_capacity(n_keys);
            softmax_row(&scores, &mut p);
            let oh = &mut out[hh * hd..(hh + 1) * hd];
            for (j, pj) in p.iter().enumerate() {
                let vj = &values[j * w + hh * hd..j * w + (hh + 1) * hd];
                for (o, v) in oh.iter_mut().zip(vj) {
                    *o += pj * v;
                }
            }
        }
        out
    }

    fn rotate_heads(&self, x: &mut [f64], row: usize) {
        let cfg = &self.config;
        let hd = cfg.head_dim();
        let (cos, sin) = rope_angles(cfg, cfg.position(row));
        for hh in 0..cfg.heads {
            let r = rotate_pairs(&x[hh * hd..(hh + 1) * hd], &cos, &sin, hd, false);
            x[hh * hd..(hh + 1) * hd].copy_from_slice(&r);
        }
    }

    /// Append one input row to `cache` and return its final hidden state.
    pub fn step(&self, cache: &mut KvCache, input: &[f64]) -> Vec<f64> {
        let cfg = &self.config;
        let w = cfg.width;
        let row = cache.rows;
        if cache.keys.is_empty() {
            cache.keys = vec![vec![]; self.blocks.len()];
            cache.values = vec![vec![]; self.blocks.len()];
        }
        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        let mut x = input.to_vec();
        for (bi, blk) in self.blocks.iter().enumerate() {
            let h = rms_norm_row(&x, self.store.value(blk.norm1).data());
            let mut q = matmul_raw(&h, self.store.value(blk.wq).data(), 1, w, w);
            let mut k = matmul_raw(&h, self.store.value(blk.wk).data(), 1, w, w);
            let v = matmul_raw(&h, self.store.value(blk.wv).data(), 1, w, w);
            self.rotate_heads(&mut q, row);
            self.rotate_heads(&mut k, row);
            q.iter_mut().for_each(|x| *x *= scale);
            cache.keys[bi].extend_from_slice(&k);
            cache.values[bi].extend_from_slice(&v);
            let att = self.attend(&q, &cache.keys[bi], &cache.values[bi], row + 1);
            let att = matmul_raw(&att, self.store.value(blk.wo).data(), 1, w, w);
            x.iter_mut().zip(&att).for_each(|(a, b)| *a += b);
            let h2 = rms_norm_row(&x, self.store.value(blk.norm2).data());
            let f = blk.ffn.apply(&self.store, &h2);
            x.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
        cache.rows += 1;
        rms_norm_row(&x, self.store.value(self.norm_f).data())
    }

    /// Full-prefix forward over `inputs` (rows in sequence order) with no
    /// reuse between calls. Returns the final hidden state of every row.
    pub fn forward_full(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let w = cfg.width;
        let n = inputs.len();
        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        let mut x: Vec<Vec<f64>> = inputs.to_vec();
        for blk in &self.blocks {
            let h: Vec<f64> = x.iter().flat_map(|r| rms_norm_row(r, self.store.value(blk.norm1).data())).collect();
            let mut q = matmul_raw(&h, self.store.value(blk.wq).data(), n, w, w);
            let mut k = matmul_raw(&h, self.store.value(blk.wk).data(), n, w, w);
            let v = matmul_raw(&h, self.store.value(blk.wv).data(), n, w, w);
            for i in 0..n {
                self.rotate_heads(&mut q[i * w..(i + 1) * w], i);
                self.rotate_heads(&mut k[i * w..(i + 1) * w], i);
            }
            q.iter_mut().for_each(|x| *x *= scale);
            for (i, xi) in x.iter_mut().enumerate() {
                let att = self.attend(&q[i * w..(i + 1) * w], &k, &v, i + 1);
                let att = matmul_raw(&att, self.store.value(blk.wo).data(), 1, w, w);
                xi.iter_mut().zip(&att).for_each(|(a, b)| *a += b);
                let h2 = rms_norm_row(xi, self.store.value(blk.norm2).data());
                let f = blk.ffn.apply(&self.store, &h2);
                xi.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            }
        }
        x.iter().map(|r| rms_norm_row(r, self.store.value(self.norm_f).data())).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::Rng as _;

    use super::*;

    pub(crate) fn tiny_config() -> ArConfig {
        ArConfig {
            token_dim: 3,
            grid_h: 2,
            grid_w: 4,
            width: 8,
            blocks: 2,
            heads: 2,
            ffn_mult: 2,
            head_hidden: 8,
            head_layers: 2,
            time_freqs: 2,
            n_classes: 3,
            cond_tokens: 2,
            zero_init_head: false,
            ..Default::default()
        }
    }

    pub(crate) fn random_tokens(cfg: &ArConfig, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 5);
        (0..cfg.seq_len()).map(|_| (0..cfg.token_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn inputs(m: &ArModel, tokens: &[Vec<f64>], class_row: usize) -> Vec<Vec<f64>> {
        let c = m.config.cond_tokens;
        (0..c + tokens.len() - 1)
            .map(|i| m.input_row(i, class_row, (i >= c).then(|| tokens[i - c].as_slice())))
            .collect()
    }

    #[test]
    fn graph_and_plain_forward_agree() {
        let m = ArModel::new(tiny_config()).unwrap();
        let toks = random_tokens(&m.config, 1);
        let mut g = Graph::new();
        let h = m.hidden_graph(&mut g, &m.store, &[(&toks, 1)]).unwrap();
        let full = m.forward_full(&inputs(&m, &toks, 1));
        let c = m.config.cond_tokens;
        for k in 0..m.config.seq_len() {
            for (a, b) in g.value(h).row_slice(k).iter().zip(&full[c - 1 + k]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cached_steps_equal_full_prefix_bitwise() {
        let m = ArModel::new(tiny_config()).unwrap();
        let toks = random_tokens(&m.config, 2);
        let rows = inputs(&m, &toks, 0);
        let mut cache = KvCache::default();
        for (i, r) in rows.iter().enumerate() {
            let h = m.step(&mut cache, r);
            let full = m.forward_full(&rows[..=i]);
            assert_eq!(h, full[i]);
        }
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let m = ArModel::new(tiny_config()).unwrap();
        let toks = random_tokens(&m.config, 3);
        let mut alt = toks.clone();
        alt[5] = vec![9.0, -9.0, 4.0];
        let (mut g1, mut g2) = (Graph::new(), Graph::new());
        let h1 = m.hidden_graph(&mut g1, &m.store, &[(&toks, 2)]).unwrap();
        let h2 = m.hidden_graph(&mut g2, &m.store, &[(&alt, 2)]).unwrap();
        // h_{k−1} for k ≤ 6 only sees z_1..z_5's predecessors
        for k in 0..=5 {
            assert_eq!(g1.value(h1).row_slice(k), g2.value(h2).row_slice(k), "row {k}");
        }
        assert_ne!(g1.value(h1).row_slice(6), g2.value(h2).row_slice(6));
    }

    #[test]
    fn rotary_inner_products_depend_on_offset_only() {
        let cfg = ArConfig {
            width: 16,
            heads: 2,
            ..tiny_config()
        };
        let hd = cfg.head_dim();
        let mut rng = stream(4, 0);
        let q: Vec<f64> = (0..hd).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..hd).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rot = |v: &[f64], p: (usize, usize)| {
            let (c, s) = rope_angles(&cfg, p);
            rotate_pairs(v, &c, &s, hd, false)
        };
        let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let base = dotp(&rot(&q, (1, 3)), &rot(&k, (2, 1)));
        for off in [(1usize, 1usize), (3, 7), (10, 2)] {
            let shifted = dotp(&rot(&q, (1 + off.0, 3 + off.1)), &rot(&k, (2 + off.0, 1 + off.1)));
            assert!((base - shifted).abs() < 1e-10);
            assert!(rot(&q, (1 + off.0, 3 + off.1)) != rot(&q, (1, 3)));
        }
    }

    #[test]
    fn unknown_class_is_rejected() {
        let m = ArModel::new(tiny_config()).unwrap();
        assert!(matches!(m.class_row(Some(3)), Err(Error::UnknownClass { id: 3, n_classes: 3 })));
        assert_eq!(m.class_row(None).unwrap(), 3);
    }
}
