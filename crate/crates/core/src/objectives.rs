//! NT-Xent (SimCLR), normalized-MSE (BYOL), and swapped-prediction (SwAV)
//! objectives, plus the Sinkhorn-Knopp code assignment.

use log::warn;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{forward_encoder, forward_predictor, forward_projection, EncoderConfig, ParamVars};

/// Projections of the two views of a batch and the contrastive temperature.
#[derive(Debug, Clone)]
pub struct ViewBatchEmbeddings {
    pub z_i: Tensor,
    pub z_j: Tensor,
    pub temperature: f64,
}

/// `u . v / (|u| |v|)`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn normalize_nonzero(tape: &mut Tape, x: Var, what: &str) -> Result<Var> {
    let (n, zero_rows) = tape.l2_normalize_rows(x)?;
    if let Some(r) = zero_rows.first() {
        return Err(Error::ZeroNorm(format!("{what} row {r} has zero norm")));
    }
    Ok(n)
}

/// NT-Xent over the `2B` stacked projections, averaged over all anchors.
///
/// Row `a` of the stacked matrix has its positive at `a + B (mod 2B)`; every
/// other row except itself enters the denominator.
pub fn nt_xent_loss(tape: &mut Tape, z_i: Var, z_j: Var, temperature: f64) -> Result<Var> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if tape.shape(z_i) != tape.shape(z_j) {
        return Err(Error::shape(format!(
            "view projections {:?} vs {:?}",
            tape.shape(z_i),
            tape.shape(z_j)
        )));
    }
    let b = tape.shape(z_i)[0];
    let z = tape.concat_rows(z_i, z_j)?;
    let zn = normalize_nonzero(tape, z, "projection")?;
    let sim = tape.matmul_bt(zn, zn)?;
    let logits = tape.scale(sim, 1.0 / temperature);
    let log_prob = tape.log_softmax_rows(logits, true)?;
    let n = 2 * b;
    let mut positives = vec![0.0; n * n];
    for a in 0..n {
        positives[a * n + (a + b) % n] = 1.0;
    }
    let mask = tape.constant_from(vec![n, n], positives)?;
    let picked = tape.mul(log_prob, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Value-only NT-Xent.
pub fn nt_xent(emb: &ViewBatchEmbeddings) -> Result<f64> {
    let mut tape = Tape::new();
    let zi = tape.constant(&emb.z_i);
    let zj = tape.constant(&emb.z_j);
    let loss = nt_xent_loss(&mut tape, zi, zj, emb.temperature)?;
    Ok(tape.scalar(loss))
}

/// Mean over rows of `2 - 2 cos(q, z)`; `target` enters under stop-gradient.
pub fn byol_loss(tape: &mut Tape, online_pred: Var, target: Var) -> Result<Var> {
    if tape.shape(online_pred) != tape.shape(target) {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            tape.shape(online_pred),
            tape.shape(target)
        )));
    }
    let b = tape.shape(online_pred)[0];
    let target = tape.detach(target);
    let qn = normalize_nonzero(tape, online_pred, "prediction")?;
    let zn = normalize_nonzero(tape, target, "target projection")?;
    let prod = tape.mul(qn, zn)?;
    let cos_sum = tape.sum(prod);
    let scaled = tape.scale(cos_sum, -2.0 / b as f64);
    Ok(tape.add_scalar(scaled, 2.0))
}

/// Online and target parameter handles for one BYOL evaluation.
pub struct ByolNetworks<'a> {
    pub online: &'a ParamVars,
    pub target: &'a ParamVars,
    pub config: &'a EncoderConfig,
}

/// `byol(q(g(f(x_i))), sg(g'(f'(x_j)))) + byol(q(g(f(x_j))), sg(g'(f'(x_i))))`.
///
/// Bind the target parameters as constants; the target branch is detached in
/// any case, so target gradients are zero.
pub fn byol_symmetric_loss(
    tape: &mut Tape,
    view_i: Var,
    view_j: Var,
    nets: &ByolNetworks,
) -> Result<Var> {
    let online = |tape: &mut Tape, x: Var| -> Result<Var> {
        let h = forward_encoder(tape, nets.online, nets.config, x)?;
        let z = forward_projection(tape, nets.online, h)?;
        forward_predictor(tape, nets.online, z)
    };
    let target = |tape: &mut Tape, x: Var| -> Result<Var> {
        let h = forward_encoder(tape, nets.target, nets.config, x)?;
        let z = forward_projection(tape, nets.target, h)?;
        Ok(tape.detach(z))
    };
    let q_i = online(tape, view_i)?;
    let q_j = online(tape, view_j)?;
    let t_i = target(tape, view_i)?;
    let t_j = target(tape, view_j)?;
    let forward = byol_loss(tape, q_i, t_j)?;
    let flipped = byol_loss(tape, q_j, t_i)?;
    tape.add(forward, flipped)
}

/// Sinkhorn-Knopp codes for a `[B x K]` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub batch: usize,
    pub n_prototypes: usize,
    /// Per-sample codes, each row summing to 1.
    pub codes: Vec<f64>,
    /// Transport plan before the final row renormalization: rows sum to
    /// `1/B`, columns approximately `1/K`.
    pub transport: Vec<f64>,
}

impl CodeMatrix {
    pub fn row(&self, b: usize) -> &[f64] {
        &self.codes[b * self.n_prototypes..(b + 1) * self.n_prototypes]
    }
}

/// Which code normalization the swapped-prediction loss consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum CodeNormalization {
    /// Rows summing to one (per-sample distributions).
    #[default]
    RowNormalized,
    /// The raw transport plan.
    Transport,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Alternating column/row normalization of `exp(scores / epsilon)`, carried
/// out in the log domain. Each round scales columns to mass `1/K` and then
/// rows to mass `1/B`.
pub fn sinkhorn_knopp(
    scores: &[f64],
    batch: usize,
    n_prototypes: usize,
    epsilon: f64,
    n_iters: usize,
) -> Result<CodeMatrix> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if n_iters == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    if scores.len() != batch * n_prototypes || batch == 0 || n_prototypes == 0 {
        return Err(Error::shape(format!(
            "{} scores for a {batch}x{n_prototypes} matrix",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("sinkhorn scores".into()));
    }
    let (bsz, k) = (batch, n_prototypes);
    let (log_b, log_k) = ((bsz as f64).ln(), (k as f64).ln());
    let mut lq: Vec<f64> = scores.iter().map(|s| s / epsilon).collect();
    for _ in 0..n_iters {
        for c in 0..k {
            let lse = log_sum_exp((0..bsz).map(|r| lq[r * k + c]));
            (0..bsz).for_each(|r| lq[r * k + c] -= lse + log_k);
        }
        for r in 0..bsz {
            let lse = log_sum_exp(lq[r * k..(r + 1) * k].iter().copied());
            lq[r * k..(r + 1) * k]
                .iter_mut()
                .for_each(|v| *v -= lse + log_b);
        }
    }
    let transport: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
    let mut codes = Vec::with_capacity(lq.len());
    for row in lq.chunks(k) {
        let lse = log_sum_exp(row.iter().copied());
        codes.extend(row.iter().map(|v| (v - lse).exp()));
    }
    Ok(CodeMatrix {
        batch: bsz,
        n_prototypes: k,
        codes,
        transport,
    })
}

/// Sinkhorn settings and temperature for the swapped-prediction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwavParams {
    pub temperature: f64,
    pub epsilon: f64,
    pub n_iters: usize,
    pub codes: CodeNormalization,
}

impl Default for SwavParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            epsilon: 0.05,
            n_iters: 3,
            codes: CodeNormalization::RowNormalized,
        }
    }
}

/// Codes for `z` against prototypes `c`, computed on values only.
pub fn swav_codes(tape: &Tape, z: Var, prototypes: Var, p: &SwavParams) -> Result<CodeMatrix> {
    let zv = tape.to_tensor(z)?;
    let cv = tape.to_tensor(prototypes)?;
    let (b, d) = (zv.shape()[0], zv.shape()[1]);
    let k = cv.shape()[0];
    if cv.shape()[1] != d {
        return Err(Error::shape(format!(
            "prototypes of width {} for projections of width {d}",
            cv.shape()[1]
        )));
    }
    let mut scores = vec![0.0; b * k];
    for r in 0..b {
        for c in 0..k {
            scores[r * k + c] = zv.values()[r * d..(r + 1) * d]
                .iter()
                .zip(&cv.values()[c * d..(c + 1) * d])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    sinkhorn_knopp(&scores, b, k, p.epsilon, p.n_iters)
}

/// Cross-entropy `-(1/B) sum_b sum_k q_b^k log softmax(z_b C^T / tau)_k`.
pub fn swapped_cross_entropy(
    tape: &mut Tape,
    z: Var,
    prototypes: Var,
    codes: &[f64],
    temperature: f64,
) -> Result<Var> {
    let scores = tape.matmul_bt(z, prototypes)?;
    let shape = tape.shape(scores).to_vec();
    if codes.len() != shape[0] * shape[1] {
        return Err(Error::shape("code matrix does not match the score matrix"));
    }
    let logits = tape.scale(scores, 1.0 / temperature);
    let log_p = tape.log_softmax_rows(logits, false)?;
    let q = tape.constant_from(shape.clone(), codes.to_vec())?;
    let weighted = tape.mul(log_p, q)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / shape[0] as f64))
}

/// `l(z_i, q_j) + l(z_j, q_i)` with fixed codes.
pub fn swav_loss_with_codes(
    tape: &mut Tape,
    z_i: Var,
    z_j: Var,
    prototypes: Var,
    q_i: &[f64],
    q_j: &[f64],
    temperature: f64,
) -> Result<Var> {
    let a = swapped_cross_entropy(tape, z_i, prototypes, q_j, temperature)?;
    let b = swapped_cross_entropy(tape, z_j, prototypes, q_i, temperature)?;
    tape.add(a, b)
}

/// Swapped-prediction loss. Codes come from Sinkhorn-Knopp under
/// stop-gradient; gradients reach `z_i`, `z_j` and the prototypes.
pub fn swav_loss(
    tape: &mut Tape,
    z_i: Var,
    z_j: Var,
    prototypes: Var,
    p: &SwavParams,
) -> Result<Var> {
    if !(p.temperature.is_finite() && p.temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {}",
            p.temperature
        )));
    }
    if tape.shape(z_i) != tape.shape(z_j) {
        return Err(Error::shape("view projections differ in shape"));
    }
    let (b, k) = (tape.shape(z_i)[0], tape.shape(prototypes)[0]);
    if k < 2 {
        return Err(Error::invalid("need at least 2 prototypes"));
    }
    if b < k {
        warn!("SwAV batch of {b} is smaller than the {k} prototypes; codes will be coarse");
    }
    let ci = swav_codes(tape, z_i, prototypes, p)?;
    let cj = swav_codes(tape, z_j, prototypes, p)?;
    let pick = |c: &CodeMatrix| match p.codes {
        CodeNormalization::RowNormalized => c.codes.clone(),
        CodeNormalization::Transport => c.transport.clone(),
    };
    swav_loss_with_codes(
        tape,
        z_i,
        z_j,
        prototypes,
        &pick(&ci),
        &pick(&cj),
        p.temperature,
    )
}

/// Trainable SwAV prototypes `C`, one unit-norm row per prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub weights: Tensor,
}

impl PrototypeBank {
    /// Random unit rows; needs `K >= 2`.
    pub fn new(n_prototypes: usize, dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            weights: crate::nn::init_prototypes(n_prototypes, dim, seed)?,
        })
    }

    /// Wraps existing weights after renormalizing their rows.
    pub fn from_tensor(mut weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || weights.shape()[0] < 2 {
            return Err(Error::shape(format!(
                "prototype bank needs K >= 2 rows, got {:?}",
                weights.shape()
            )));
        }
        renormalize_prototypes(&mut weights);
        Ok(Self { weights })
    }

    pub fn n_prototypes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn renormalize(&mut self) {
        renormalize_prototypes(&mut self.weights);
    }
}

/// Renormalizes every prototype row to unit L2 norm.
pub fn renormalize_prototypes(prototypes: &mut Tensor) {
    let d = prototypes.shape()[1];
    for row in prototypes.values_mut().chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}
