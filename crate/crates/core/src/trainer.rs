//! Loss assembly, the epoch loop and latent fitting.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodecoder::{conditioning, AdamConfig, AdamState, Checkpoint, LatentTable, Network, NetworkConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::{aa_range, compose_train_grad, kernel, pixel_center, Composer, Supervision};
use crate::geometry::{detect_corners, glyph_sdf, Corner};
use crate::glyph::{load_glyph, load_manifest, Alphabet, Glyph};
use crate::render::{render_implicit, RasterImage};
use crate::sampling::{sample_glyph, SampleSet, SamplingConfig};
use crate::templates::{build_template, corner_sse_grad, CornerTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Corner term.
    pub alpha: f64,
    /// Eikonal term.
    pub beta: f64,
    /// Latent norm term.
    pub gamma_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.01,
            gamma_reg: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_reg", self.gamma_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupConfig {
    pub enabled: bool,
    pub gamma_start: f64,
    /// Defaults to half of the epochs.
    pub anneal_epochs: Option<usize>,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig {
            enabled: true,
            gamma_start: 1.0,
            anneal_epochs: None,
        }
    }
}

/// Anti-alias range and training composer per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub anneal_epochs: usize,
}

impl WarmupSchedule {
    pub fn new(cfg: &WarmupConfig, gamma_end: f64, total_epochs: usize) -> Self {
        if !cfg.enabled {
            return WarmupSchedule {
                gamma_start: gamma_end,
                gamma_end,
                anneal_epochs: 0,
            };
        }
        WarmupSchedule {
            gamma_start: cfg.gamma_start.max(gamma_end),
            gamma_end,
            anneal_epochs: cfg.anneal_epochs.unwrap_or(total_epochs / 2),
        }
    }

    /// Log-linear from `gamma_start` at epoch 0 to `gamma_end` at
    /// `anneal_epochs`, constant afterwards.
    pub fn gamma(&self, epoch: usize) -> f64 {
        if epoch >= self.anneal_epochs {
            return self.gamma_end;
        }
        let f = epoch as f64 / self.anneal_epochs as f64;
        self.gamma_start * (self.gamma_end / self.gamma_start).powf(f)
    }

    pub fn composer(&self, epoch: usize) -> Composer {
        if epoch < self.anneal_epochs {
            Composer::Mean
        } else {
            Composer::MedianPair
        }
    }
}

/// Per-term multipliers of the objective. The training objective uses
/// `global = 1` and the configured loss weights for the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub global: f64,
    pub local: f64,
    pub eikonal: f64,
    pub latent: f64,
}

impl From<LossWeights> for TermWeights {
    fn from(w: LossWeights) -> Self {
        TermWeights {
            global: 1.0,
            local: w.alpha,
            eikonal: w.beta,
            latent: w.gamma_reg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossContext {
    pub gamma: f64,
    pub composer: Composer,
    pub supervision: Supervision,
    pub terms: TermWeights,
    /// Finite-difference step of the Eikonal stencil.
    pub eikonal_step: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub global: f64,
    pub local: f64,
    pub grad: f64,
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: LossBreakdown,
    /// Gradient w.r.t. the network parameters (empty without gradients).
    pub params: Vec<f64>,
    /// Gradient w.r.t. the latent code (empty without gradients).
    pub latent: Vec<f64>,
}

/// Mean squared error between composed opacities and targets.
pub fn loss_global(composed: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(composed.len(), targets.len());
    if composed.is_empty() {
        return 0.0;
    }
    composed
        .iter()
        .zip(targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / composed.len() as f64
}

/// One-sided Eikonal penalty: mean of `1 - |g|` where `|g| < 1`.
pub fn loss_eikonal(gradients: &[[f64; 2]]) -> f64 {
    if gradients.is_empty() {
        return 0.0;
    }
    gradients.iter().map(|g| (1.0 - g[0].hypot(g[1])).max(0.0)).sum::<f64>() / gradients.len() as f64
}

const STENCIL: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

/// Evaluate the weighted objective of one glyph, optionally with gradients.
///
/// The Eikonal term is evaluated only when its weight is positive and the
/// outputs are distances; the corner term only for three channels.
pub fn evaluate(
    net: &Network,
    latent: &[f64],
    label: usize,
    samples: &SampleSet,
    templates: &[CornerTemplate],
    ctx: &LossContext,
    with_grad: bool,
) -> Result<Objective> {
    let cfg = net.config();
    let n = cfg.out_channels;
    let ns = samples.len();
    let w = ctx.terms;
    let eikonal = w.eikonal > 0.0 && ctx.supervision == Supervision::Sdf && ns > 0;
    let h = ctx.eikonal_step;

    let mut points: Vec<[f64; 2]> = samples.samples.iter().map(|s| [s.position.x, s.position.y]).collect();
    if eikonal {
        for s in &samples.samples {
            for d in STENCIL {
                points.push([s.position.x + d[0] * h, s.position.y + d[1] * h]);
            }
        }
    }
    let cond = conditioning(cfg, label, latent)?;
    let eval = net.forward_chunked(&points, &cond)?;
    let out = eval.outputs();
    let mut up = vec![0.0; out.len()];
    let mut loss = LossBreakdown::default();

    // Opacities and their slopes at the sample points.
    let mut opac = vec![0.0; ns * n];
    let mut slope = vec![0.0; ns * n];
    for k in 0..ns * n {
        let (o, s) = ctx.supervision.train_opacity(out[k], ctx.gamma);
        opac[k] = o;
        slope[k] = s;
    }

    if ns > 0 {
        let mut sum = 0.0;
        for (s, sample) in samples.samples.iter().enumerate() {
            let (f, gf) = compose_train_grad(&opac[s * n..(s + 1) * n], ctx.composer);
            let r = f - sample.target;
            sum += r * r;
            let coef = w.global * 2.0 * r / ns as f64;
            for c in 0..n {
                up[s * n + c] += coef * gf[c] * slope[s * n + c];
            }
        }
        loss.global = sum / ns as f64;
    }

    if n == 3 && !templates.is_empty() {
        let mut preds: Vec<Vec<[f64; 3]>> = templates.iter().map(|t| vec![[0.0; 3]; t.points.len()]).collect();
        let mut owner: Vec<Vec<usize>> = templates.iter().map(|t| vec![usize::MAX; t.points.len()]).collect();
        for (s, sample) in samples.samples.iter().enumerate() {
            if let Some(r) = sample.corner_ref {
                preds[r.template][r.point] = [opac[s * 3], opac[s * 3 + 1], opac[s * 3 + 2]];
                owner[r.template][r.point] = s;
            }
        }
        let mut sse = 0.0;
        let mut count = 0usize;
        let mut grads = Vec::with_capacity(templates.len());
        for (t, tpl) in templates.iter().enumerate() {
            if owner[t].contains(&usize::MAX) {
                return Err(Error::Contract(format!(
                    "template {t} is not fully covered by corner samples"
                )));
            }
            let (e, c, g) = corner_sse_grad(&preds[t], tpl);
            sse += e;
            count += c;
            grads.push(g);
        }
        if count > 0 {
            loss.local = sse / count as f64;
            let coef = w.local / count as f64;
            for (t, g) in grads.iter().enumerate() {
                for (p, gp) in g.iter().enumerate() {
                    let s = owner[t][p];
                    for c in 0..3 {
                        up[s * 3 + c] += coef * gp[c] * slope[s * 3 + c];
                    }
                }
            }
        }
    }

    if eikonal {
        let norm = (ns * n) as f64;
        let mut sum = 0.0;
        for s in 0..ns {
            let base = ns + 4 * s;
            for c in 0..n {
                let at = |k: usize| (base + k) * n + c;
                let gx = (out[at(0)] - out[at(1)]) / (2.0 * h);
                let gy = (out[at(2)] - out[at(3)]) / (2.0 * h);
                let len = gx.hypot(gy);
                if len < 1.0 {
                    sum += 1.0 - len;
                    if len > 0.0 {
                        let coef = -w.eikonal / norm / len / (2.0 * h);
                        up[at(0)] += coef * gx;
                        up[at(1)] -= coef * gx;
                        up[at(2)] += coef * gy;
                        up[at(3)] -= coef * gy;
                    }
                }
            }
        }
        loss.grad = sum / norm;
    }

    let z_norm = latent.iter().map(|v| v * v).sum::<f64>().sqrt();
    loss.latent = z_norm;
    loss.total = w.global * loss.global + w.local * loss.local + w.eikonal * loss.grad + w.latent * loss.latent;

    for (name, v) in [
        ("global", loss.global),
        ("local", loss.local),
        ("eikonal", loss.grad),
        ("latent", loss.latent),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss term '{name}' is not finite ({v})")));
        }
    }

    if !with_grad {
        return Ok(Objective {
            loss,
            params: Vec::new(),
            latent: Vec::new(),
        });
    }
    let (pg, _) = eval.backward(net, &up)?;
    let mut zg = pg.latent(cfg).to_vec();
    if z_norm > 0.0 && w.latent != 0.0 {
        for (g, v) in zg.iter_mut().zip(latent) {
            *g += w.latent * v / z_norm;
        }
    }
    Ok(Objective {
        loss,
        params: pg.params,
        latent: zg,
    })
}

/// A normalized training glyph with its cached distance grid and corners.
#[derive(Debug, Clone)]
pub struct TrainGlyph {
    pub glyph: Glyph,
    pub family: usize,
    pub label: usize,
    /// Analytic signed distance at the training-raster pixel centers.
    pub sdf: Vec<f64>,
    pub corners: Vec<Corner>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub alphabet: Alphabet,
    pub families: Vec<String>,
    pub glyphs: Vec<TrainGlyph>,
    pub train_width: usize,
}

impl Dataset {
    /// Glyphs must already be normalized; `family` indexes `families`.
    pub fn new(
        alphabet: Alphabet,
        families: Vec<String>,
        glyphs: Vec<(Glyph, usize)>,
        train_width: usize,
        corner_threshold: f64,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(glyphs.len());
        for (glyph, family) in glyphs {
            if family >= families.len() {
                return Err(Error::Dataset(format!("family index {family} out of range")));
            }
            if glyph.label >= alphabet.len() {
                return Err(Error::Dataset(format!(
                    "label index {} outside the alphabet",
                    glyph.label
                )));
            }
            let corners = detect_corners(&glyph, corner_threshold).map_err(|e| {
                Error::Dataset(format!(
                    "{} / {}: {e}",
                    families[family],
                    label_name(&alphabet, glyph.label)
                ))
            })?;
            let w = train_width;
            let sdf = (0..w * w)
                .map(|k| glyph_sdf(pixel_center(k / w, k % w, w, w), &glyph))
                .collect();
            out.push(TrainGlyph {
                label: glyph.label,
                glyph,
                family,
                sdf,
                corners,
            });
        }
        Ok(Dataset {
            alphabet,
            families,
            glyphs: out,
            train_width,
        })
    }

    /// Load every manifest entry; families are numbered in order of first
    /// appearance.
    pub fn from_manifest(path: &Path, config: &RunConfig) -> Result<Self> {
        let alphabet = config.dataset.alphabet.clone();
        let entries = load_manifest(path, &alphabet)?;
        let mut families: Vec<String> = Vec::new();
        let mut glyphs = Vec::with_capacity(entries.len());
        for e in &entries {
            let g = load_glyph(e, config.dataset.margin)?;
            let idx = match families.iter().position(|f| *f == e.family) {
                Some(i) => i,
                None => {
                    families.push(e.family.clone());
                    families.len() - 1
                }
            };
            glyphs.push((g, idx));
        }
        Dataset::new(
            alphabet,
            families,
            glyphs,
            config.field.train_width,
            config.dataset.corner_threshold,
        )
    }
}

fn label_name(alphabet: &Alphabet, label: usize) -> String {
    alphabet
        .symbol(label)
        .map(String::from)
        .unwrap_or_else(|| label.to_string())
}

/// Targets, templates and samples of one glyph at one anti-alias range.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub gamma: f64,
    pub raster: RasterImage,
    pub templates: Vec<CornerTemplate>,
    pub samples: SampleSet,
}

pub fn prepare_glyph(g: &TrainGlyph, width: usize, gamma: f64, cfg: &SamplingConfig, seed: u64) -> Result<Prepared> {
    let raster = RasterImage::new(width, width, g.sdf.iter().map(|&d| kernel(d, gamma)).collect())?;
    let templates = g
        .corners
        .iter()
        .map(|c| build_template(c, width, gamma))
        .collect::<Result<Vec<_>>>()?;
    let samples = sample_glyph(&g.glyph, &raster, &templates, gamma, cfg, seed)?;
    Ok(Prepared {
        gamma,
        raster,
        templates,
        samples,
    })
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub gamma: f64,
    pub loss_total: f64,
    pub loss_global: f64,
    pub loss_local: f64,
    pub loss_grad: f64,
    pub latent_norm: f64,
    pub wall_ms: u64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,gamma,loss_total,loss_global,loss_local,loss_grad,latent_norm,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.gamma,
            self.loss_total,
            self.loss_global,
            self.loss_local,
            self.loss_grad,
            self.latent_norm,
            self.wall_ms
        )
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub network: Network,
    pub latents: LatentTable,
    pub network_adam: AdamState,
    pub latent_adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    schedule: WarmupSchedule,
    cache: Vec<Option<Prepared>>,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        if dataset.glyphs.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        let net_cfg = config.network_config(dataset.alphabet.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let network = Network::init(net_cfg, &mut rng)?;
        let latents = LatentTable::init(dataset.families.len(), config.network.latent_dim, &mut rng);
        let adam = AdamConfig::with_lr(config.train.lr);
        Trainer::assemble(
            config,
            dataset,
            network,
            latents,
            AdamState::new(0, adam),
            AdamState::new(0, adam),
            0,
        )
    }

    /// Continue from a checkpoint written by a run with the same configuration.
    pub fn resume(config: RunConfig, dataset: Dataset, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        let expected = config.network_config(dataset.alphabet.len());
        if ck.network.config() != &expected {
            return Err(Error::Shape(
                "checkpoint network does not match the configuration".into(),
            ));
        }
        if ck.families != dataset.families || ck.alphabet != dataset.alphabet {
            return Err(Error::Dataset(
                "checkpoint families or alphabet differ from the dataset".into(),
            ));
        }
        Trainer::assemble(
            config,
            dataset,
            ck.network,
            ck.latents,
            ck.network_adam,
            ck.latent_adam,
            ck.epoch,
        )
    }

    fn assemble(
        config: RunConfig,
        dataset: Dataset,
        network: Network,
        latents: LatentTable,
        mut network_adam: AdamState,
        mut latent_adam: AdamState,
        epoch: usize,
    ) -> Result<Self> {
        if network_adam.m.is_empty() {
            network_adam = AdamState::new(network.params().len(), network_adam.config);
        }
        if latent_adam.m.is_empty() {
            latent_adam = AdamState::new(latents.codes.len(), latent_adam.config);
        }
        let schedule = WarmupSchedule::new(&config.train.warmup, config.field.final_gamma(), config.train.epochs);
        let pool = match config.train.threads {
            0 => None,
            t => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
        };
        let cache = vec![None; dataset.glyphs.len()];
        Ok(Trainer {
            config,
            dataset,
            network,
            latents,
            network_adam,
            latent_adam,
            epoch,
            schedule,
            cache,
            pool,
        })
    }

    pub fn schedule(&self) -> &WarmupSchedule {
        &self.schedule
    }

    fn context(&self, epoch: usize) -> LossContext {
        LossContext {
            gamma: self.schedule.gamma(epoch),
            composer: self.schedule.composer(epoch),
            supervision: self.config.train.supervision,
            terms: self.config.train.weights.into(),
            eikonal_step: 1.0 / (2.0 * self.dataset.train_width as f64),
        }
    }

    /// Samples are rebuilt only when the anti-alias range changes.
    fn prepared(&mut self, gi: usize, gamma: f64) -> Result<&Prepared> {
        let stale = self.cache[gi].as_ref().is_none_or(|p| p.gamma != gamma);
        if stale {
            let seed = mix_seed(mix_seed(self.config.train.seed, gi as u64), gamma.to_bits());
            let p = prepare_glyph(
                &self.dataset.glyphs[gi],
                self.dataset.train_width,
                gamma,
                &self.config.train.sampling_config(),
                seed,
            )?;
            self.cache[gi] = Some(p);
        }
        Ok(self.cache[gi].as_ref().unwrap())
    }

    /// One pass over all glyphs, one ADAM step per glyph in shuffled order.
    /// On error nothing of the failing step has been applied.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        match self.pool.take() {
            Some(pool) => {
                let r = pool.install(|| self.epoch_inner());
                self.pool = Some(pool);
                r
            }
            None => self.epoch_inner(),
        }
    }

    fn epoch_inner(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let epoch = self.epoch;
        let ctx = self.context(epoch);
        if let Some(f) = self.config.train.freeze_epoch {
            if epoch >= f {
                self.latents.frozen = true;
            }
        }
        let mut order: Vec<usize> = (0..self.dataset.glyphs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            self.config.train.seed,
            0x5eed_0000 + epoch as u64,
        )));

        let mut acc = LossBreakdown::default();
        for &gi in &order {
            let (family, label) = (self.dataset.glyphs[gi].family, self.dataset.glyphs[gi].label);
            self.prepared(gi, ctx.gamma)?;
            let prep = self.cache[gi].as_ref().unwrap();
            let z = self.latents.code(family).to_vec();
            let obj = evaluate(&self.network, &z, label, &prep.samples, &prep.templates, &ctx, true)
                .map_err(|e| attribute(e, &self.dataset, gi, epoch))?;
            let mut table_grad = vec![0.0; self.latents.codes.len()];
            let dim = self.latents.dim;
            table_grad[family * dim..(family + 1) * dim].copy_from_slice(&obj.latent);
            if let Some(i) = table_grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in latent code {} at epoch {epoch}",
                    i / dim.max(1)
                )));
            }
            self.network
                .adam_step(&mut self.network_adam, &obj.params)
                .map_err(|e| attribute(e, &self.dataset, gi, epoch))?;
            self.latents.update(&mut self.latent_adam, &table_grad)?;
            acc.total += obj.loss.total;
            acc.global += obj.loss.global;
            acc.local += obj.loss.local;
            acc.grad += obj.loss.grad;
        }
        let g = order.len() as f64;
        let fams = self.latents.len();
        let latent_norm = (0..fams)
            .map(|f| self.latents.code(f).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / fams.max(1) as f64;
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            gamma: ctx.gamma,
            loss_total: acc.total / g,
            loss_global: acc.global / g,
            loss_local: acc.local / g,
            loss_grad: acc.grad / g,
            latent_norm,
            // Timing would make single-threaded logs differ between runs.
            wall_ms: if self.config.train.threads == 1 {
                0
            } else {
                start.elapsed().as_millis() as u64
            },
        })
    }

    /// Run the remaining epochs, calling `on_epoch` after each.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.train.epochs {
            let m = self.run_epoch()?;
            on_epoch(self, &m)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            network: self.network.clone(),
            latents: self.latents.clone(),
            network_adam: self.network_adam.clone(),
            latent_adam: self.latent_adam.clone(),
            epoch: self.epoch,
            families: self.dataset.families.clone(),
            alphabet: self.dataset.alphabet.clone(),
            config: serde_json::to_value(&self.config)?,
        })
    }

    /// Reconstruction of a training glyph at width `w`.
    pub fn render(&self, glyph_index: usize, w: usize) -> Result<RasterImage> {
        let g = &self.dataset.glyphs[glyph_index];
        render_implicit(
            &self.network,
            self.latents.code(g.family),
            g.label,
            w,
            self.config.field.aa_k,
            self.config.train.supervision,
        )
    }
}

fn attribute(e: Error, ds: &Dataset, gi: usize, epoch: usize) -> Error {
    match e {
        Error::Numerical(m) => {
            let g = &ds.glyphs[gi];
            Error::Numerical(format!(
                "{m} (epoch {epoch}, family '{}', label '{}')",
                ds.families[g.family],
                label_name(&ds.alphabet, g.label)
            ))
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lr: f64,
    pub steps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { lr: 1e-2, steps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub latent: Vec<f64>,
    /// Objective before each step.
    pub losses: Vec<f64>,
}

/// Everything `fit_latent` needs besides the network and the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub aa_k: f64,
    pub supervision: Supervision,
    pub gamma_reg: f64,
    pub fit: FitConfig,
}

/// Optimize a latent code alone so the render of `label` matches `target`.
/// Pixels where `mask >= 0.5` are ignored.
pub fn fit_latent(
    net: &Network,
    init: &[f64],
    target: &RasterImage,
    label: usize,
    mask: Option<&RasterImage>,
    settings: &FitSettings,
) -> Result<FitResult> {
    let cfg: &NetworkConfig = net.config();
    if label >= cfg.label_count {
        return Err(Error::Contract(format!(
            "label {label} outside alphabet of {}",
            cfg.label_count
        )));
    }
    if let Some(m) = mask {
        if m.width != target.width || m.height != target.height {
            return Err(Error::Shape(format!(
                "mask is {}x{}, target is {}x{}",
                m.width, m.height, target.width, target.height
            )));
        }
    }
    let (w, h) = (target.width, target.height);
    let gamma = aa_range(settings.aa_k, w);
    let n = cfg.out_channels;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask.is_some_and(|m| m.get(i, j) >= 0.5) {
                continue;
            }
            let p = pixel_center(i, j, h, w);
            points.push([p.x, p.y]);
            targets.push(target.get(i, j));
        }
    }
    let np = points.len();
    let mut z = init.to_vec();
    let mut adam = AdamState::new(z.len(), AdamConfig::with_lr(settings.fit.lr));
    let mut losses = Vec::with_capacity(settings.fit.steps);
    for _ in 0..settings.fit.steps {
        let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut grad = vec![0.0; z.len()];
        let mut data_loss = 0.0;
        if np > 0 {
            let cond = conditioning(cfg, label, &z)?;
            let eval = net.forward_chunked(&points, &cond)?;
            let out = eval.outputs();
            let mut up = vec![0.0; out.len()];
            for s in 0..np {
                let mut c = [0.0; 3];
                let mut dc = [0.0; 3];
                for k in 0..n {
                    (c[k], dc[k]) = settings.supervision.train_opacity(out[s * n + k], gamma);
                }
                let (f, gf) = compose_train_grad(&c[..n], Composer::MedianPair);
                let r = f - targets[s];
                data_loss += r * r;
                for k in 0..n {
                    up[s * n + k] = 2.0 * r / np as f64 * gf[k] * dc[k];
                }
            }
            data_loss /= np as f64;
            let (pg, _) = eval.backward(net, &up)?;
            grad.copy_from_slice(pg.latent(cfg));
        }
        if z_norm > 0.0 {
            for (g, v) in grad.iter_mut().zip(&z) {
                *g += settings.gamma_reg * v / z_norm;
            }
        }
        let total = data_loss + settings.gamma_reg * z_norm;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "latent fit objective is not finite ({total})"
            )));
        }
        losses.push(total);
        adam.step(&mut z, &grad, |i| format!("fitted latent component {i}"))?;
    }
    Ok(FitResult { latent: z, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::compose_train;
    use crate::point::Point;
    use crate::sampling::{FieldSample, SampleKind};

    fn tiny_net(channels: usize, seed: u64) -> Network {
        let cfg = NetworkConfig {
            label_count: 3,
            latent_dim: 4,
            hidden_layers: 2,
            hidden_width: 16,
            skip_after: Some(1),
            out_channels: channels,
            leaky_slope: 0.01,
        };
        Network::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn square() -> Glyph {
        Glyph::from_path("M -0.6 -0.6 L 0.6 -0.6 L 0.6 0.6 L -0.6 0.6 Z").unwrap()
    }

    fn prepared_square(w: usize, gamma: f64) -> Prepared {
        let ds = Dataset::new(
            Alphabet::new("abc").unwrap(),
            vec!["f".into()],
            vec![(square(), 0)],
            w,
            3.0,
        )
        .unwrap();
        prepare_glyph(&ds.glyphs[0], w, gamma, &SamplingConfig::default(), 7).unwrap()
    }

    fn ctx(terms: TermWeights) -> LossContext {
        LossContext {
            gamma: 0.25,
            composer: Composer::MedianPair,
            supervision: Supervision::Sdf,
            terms,
            eikonal_step: 1.0 / 32.0,
        }
    }

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = WarmupSchedule::new(&WarmupConfig::default(), 4.0 / 64.0, 2000);
        assert_eq!(s.gamma(0), 1.0);
        assert_eq!(s.gamma(1000), 0.0625);
        assert_eq!(s.gamma(1999), 0.0625);
        assert_eq!(s.composer(10), Composer::Mean);
        assert_eq!(s.composer(1000), Composer::MedianPair);
        for e in 0..1999 {
            assert!(s.gamma(e + 1) <= s.gamma(e));
        }
        let off = WarmupSchedule::new(
            &WarmupConfig {
                enabled: false,
                ..Default::default()
            },
            0.0625,
            100,
        );
        assert_eq!(off.gamma(0), 0.0625);
        assert_eq!(off.composer(0), Composer::MedianPair);
    }

    #[test]
    fn global_and_eikonal_examples() {
        assert_eq!(loss_global(&[0.2, 0.7], &[0.2, 0.7]), 0.0);
        assert_eq!(loss_global(&[0.5; 4], &[0.0, 1.0, 1.0, 0.0]), 0.25);
        assert_eq!(loss_eikonal(&[[0.3, 0.4]]), 0.5);
        assert_eq!(loss_eikonal(&[[2.0, 0.0]]), 0.0);
        assert_eq!(loss_eikonal(&[[0.6, 0.8]]), 0.0);
    }

    #[test]
    fn global_term_matches_per_sample_oracle() {
        let net = tiny_net(3, 1);
        let prep = prepared_square(16, 0.25);
        let z = [0.1, -0.1, 0.2, 0.05];
        let c = ctx(TermWeights {
            global: 1.0,
            local: 0.0,
            eikonal: 0.0,
            latent: 0.0,
        });
        let obj = evaluate(&net, &z, 1, &prep.samples, &prep.templates, &c, false).unwrap();
        let mut sum = 0.0;
        for s in &prep.samples.samples {
            let out = net.forward(&z, 1, [s.position.x, s.position.y]).unwrap();
            let k: Vec<f64> = out.iter().map(|&d| kernel(d, 0.25)).collect();
            sum += (compose_train(&k, Composer::MedianPair) - s.target).powi(2);
        }
        let want = sum / prep.samples.len() as f64;
        assert!((obj.loss.global - want).abs() < 1e-12);
        assert_eq!(obj.loss.total, obj.loss.global);
    }

    #[test]
    fn total_is_sum_of_terms() {
        let net = tiny_net(3, 2);
        let prep = prepared_square(16, 0.25);
        let z = [0.3, -0.1, 0.2, 0.4];
        let w = TermWeights {
            global: 1.0,
            local: 0.7,
            eikonal: 0.3,
            latent: 0.01,
        };
        let all = evaluate(&net, &z, 0, &prep.samples, &prep.templates, &ctx(w), false).unwrap();
        let only = |t: TermWeights| {
            evaluate(&net, &z, 0, &prep.samples, &prep.templates, &ctx(t), false)
                .unwrap()
                .loss
        };
        let zero = TermWeights {
            global: 0.0,
            local: 0.0,
            eikonal: 0.0,
            latent: 0.0,
        };
        let g = only(TermWeights { global: 1.0, ..zero }).global;
        let l = only(TermWeights { local: 1.0, ..zero }).local;
        let e = only(TermWeights { eikonal: 1.0, ..zero }).grad;
        let n = (z.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!((all.loss.total - (g + 0.7 * l + 0.3 * e + 0.01 * n)).abs() < 1e-12);
        assert!(l > 0.0 && e >= 0.0);
        // A zero latent contributes nothing.
        let at_zero = evaluate(&net, &[0.0; 4], 0, &prep.samples, &prep.templates, &ctx(w), false).unwrap();
        assert_eq!(at_zero.loss.latent, 0.0);
    }

    #[test]
    fn half_prediction_against_binary_targets() {
        // A zero network predicts distance 0, opacity 0.5 everywhere.
        let net = Network::zeros(tiny_net(3, 0).config().clone()).unwrap();
        let samples = SampleSet {
            samples: (0..8)
                .map(|k| FieldSample {
                    position: Point::new(k as f64 * 0.1, 0.0),
                    kind: SampleKind::Homogeneous,
                    target: (k % 2) as f64,
                    corner_ref: None,
                })
                .collect(),
            seed: 0,
        };
        let obj = evaluate(
            &net,
            &[0.0; 4],
            0,
            &samples,
            &[],
            &ctx(TermWeights::from(LossWeights::default())),
            false,
        )
        .unwrap();
        assert_eq!(obj.loss.global, 0.25);
    }

    fn fd_check(terms: TermWeights, channels: usize, supervision: Supervision) {
        let net = tiny_net(channels, 11);
        let prep = prepared_square(12, 0.4);
        let z = vec![0.2, -0.3, 0.1, 0.25];
        let mut c = ctx(terms);
        c.gamma = 0.4;
        c.supervision = supervision;
        let obj = evaluate(&net, &z, 2, &prep.samples, &prep.templates, &c, true).unwrap();
        let f = |net: &Network, z: &[f64]| {
            evaluate(net, z, 2, &prep.samples, &prep.templates, &c, false)
                .unwrap()
                .loss
                .total
        };
        let h = 1e-6;
        let scale = obj.params.iter().chain(&obj.latent).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for i in 0..net.params().len() {
            let mut p = net.params().to_vec();
            p[i] += h;
            let fp = f(&Network::from_params(net.config().clone(), p.clone()).unwrap(), &z);
            p[i] -= 2.0 * h;
            let fm = f(&Network::from_params(net.config().clone(), p).unwrap(), &z);
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - obj.params[i]).abs() / fd.abs().max(obj.params[i].abs()).max(1e-3 * scale);
            assert!(err < 1e-3, "param {i}: fd {fd} vs {}", obj.params[i]);
        }
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let fp = f(&net, &zp);
            zp[i] -= 2.0 * h;
            let fm = f(&net, &zp);
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - obj.latent[i]).abs() / fd.abs().max(obj.latent[i].abs()).max(1e-3 * scale);
            assert!(err < 1e-3, "latent {i}: fd {fd} vs {}", obj.latent[i]);
        }
    }

    const ZERO: TermWeights = TermWeights {
        global: 0.0,
        local: 0.0,
        eikonal: 0.0,
        latent: 0.0,
    };

    #[test]
    fn gradients_of_each_term() {
        fd_check(TermWeights { global: 1.0, ..ZERO }, 3, Supervision::Sdf);
        fd_check(TermWeights { local: 1.0, ..ZERO }, 3, Supervision::Sdf);
        fd_check(TermWeights { eikonal: 1.0, ..ZERO }, 3, Supervision::Sdf);
        fd_check(TermWeights { latent: 1.0, ..ZERO }, 3, Supervision::Sdf);
        fd_check(TermWeights { global: 1.0, ..ZERO }, 1, Supervision::Pixel);
    }

    #[test]
    fn fully_masked_fit_shrinks_latent() {
        let net = tiny_net(3, 4);
        let target = RasterImage::filled(8, 8, 1.0);
        let mask = RasterImage::filled(8, 8, 1.0);
        let init = [0.5, -0.4, 0.3, 0.2];
        let settings = FitSettings {
            aa_k: 4.0,
            supervision: Supervision::Sdf,
            gamma_reg: 1.0,
            fit: FitConfig { lr: 1e-2, steps: 200 },
        };
        let r = fit_latent(&net, &init, &target, 0, Some(&mask), &settings).unwrap();
        let n0 = init.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let n1 = r.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n1 < 0.1 * n0, "{n1} vs {n0}");
        assert!(fit_latent(&net, &init, &target, 3, None, &settings).is_err());
        let wrong = RasterImage::filled(4, 4, 0.0);
        assert!(matches!(
            fit_latent(&net, &init, &target, 0, Some(&wrong), &settings),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn masked_pixels_do_not_matter() {
        let net = tiny_net(3, 5);
        let settings = FitSettings {
            aa_k: 4.0,
            supervision: Supervision::Sdf,
            gamma_reg: 1e-4,
            fit: FitConfig { lr: 1e-2, steps: 5 },
        };
        let mut mask = vec![0.0; 64];
        mask[..32].iter_mut().for_each(|v| *v = 1.0);
        let mask = RasterImage::new(8, 8, mask).unwrap();
        let a = RasterImage::new(8, 8, (0..64).map(|k| (k % 3) as f64 / 2.0).collect()).unwrap();
        let mut b = a.clone();
        b.values[..32].iter_mut().for_each(|v| *v = 1.0 - *v);
        let init = [0.01; 4];
        let ra = fit_latent(&net, &init, &a, 1, Some(&mask), &settings).unwrap();
        let rb = fit_latent(&net, &init, &b, 1, Some(&mask), &settings).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn seed_mixing_separates_inputs() {
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
