//! Logistic scorer trained by mini-batch SGD with momentum.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::RefDetError;
use crate::annotations::ParseError;
use crate::sampler::{sample_minibatch, Candidate, PoolEntry, SamplerConfig, SamplerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub iterations: usize,
    pub learning_rate: f64,
}

/// How per-RoI losses of a mini-batch combine into the step objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchReduction {
    Mean,
    Sum,
}

/// Two-phase step schedule: a base rate, then a tenth of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub phases: Vec<Phase>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub images_per_batch: usize,
    pub reduction: BatchReduction,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            phases: vec![
                Phase {
                    iterations: 5000,
                    learning_rate: 0.001,
                },
                Phase {
                    iterations: 2000,
                    learning_rate: 0.0001,
                },
            ],
            momentum: 0.9,
            weight_decay: 0.0005,
            images_per_batch: 2,
            reduction: BatchReduction::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub phases: Vec<Phase>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearScorer {
    pub fn zeros(len: usize) -> Self {
        Self {
            weights: vec![0.0; len],
            bias: 0.0,
            training_meta: TrainingMeta {
                phases: Vec::new(),
                momentum: 0.0,
                weight_decay: 0.0,
                seed: 0,
            },
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Probability-like score in `(0, 1)`.
    pub fn score(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.logit(x.values()))
    }

    /// Line-oriented snapshot. Floats use the shortest representation that
    /// reads back bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::from("linear-scorer v1\n");
        writeln!(out, "feature_length {}", self.weights.len()).unwrap();
        out.push_str("weights");
        for w in &self.weights {
            write!(out, " {w:?}").unwrap();
        }
        out.push('\n');
        writeln!(out, "bias {:?}", self.bias).unwrap();
        for p in &self.training_meta.phases {
            writeln!(out, "phase {} {:?}", p.iterations, p.learning_rate).unwrap();
        }
        writeln!(out, "momentum {:?}", self.training_meta.momentum).unwrap();
        writeln!(out, "weight_decay {:?}", self.training_meta.weight_decay).unwrap();
        writeln!(out, "seed {}", self.training_meta.seed).unwrap();
        out
    }

    pub fn from_text(content: &str) -> Result<Self, ParseError> {
        let bad = |line: usize, message: String| ParseError::Malformed { line, message };
        let num = |line: usize, t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("non-numeric value {t:?}")))
        };
        let mut len = None;
        let mut weights = None;
        let mut bias = None;
        let mut meta = TrainingMeta {
            phases: Vec::new(),
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
        };
        for (idx, raw) in content.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() || (idx == 0 && line.starts_with("linear-scorer")) {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let key = tokens.next().unwrap_or_default();
            let rest: Vec<&str> = tokens.collect();
            let one = |rest: &[&str]| -> Result<f64, ParseError> {
                match rest {
                    [v] => num(line_no, v),
                    _ => Err(bad(line_no, format!("expected one value after {key:?}"))),
                }
            };
            match key {
                "feature_length" => {
                    len = Some(
                        rest.first()
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| bad(line_no, "bad feature length".into()))?,
                    )
                }
                "weights" => {
                    weights = Some(
                        rest.iter()
                            .map(|t| num(line_no, t))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "bias" => bias = Some(one(&rest)?),
                "phase" => match rest[..] {
                    [it, lr] => meta.phases.push(Phase {
                        iterations: it
                            .parse()
                            .map_err(|_| bad(line_no, format!("bad iteration count {it:?}")))?,
                        learning_rate: num(line_no, lr)?,
                    }),
                    _ => return Err(bad(line_no, "expected `phase ITER RATE`".into())),
                },
                "momentum" => meta.momentum = one(&rest)?,
                "weight_decay" => meta.weight_decay = one(&rest)?,
                "seed" => {
                    meta.seed = rest
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad(line_no, "bad seed".into()))?
                }
                other => return Err(bad(line_no, format!("unknown key {other:?}"))),
            }
        }
        let end = content.lines().count() + 1;
        let missing = |what: &str| ParseError::Truncated {
            line: end,
            message: format!("missing {what}"),
        };
        let len = len.ok_or_else(|| missing("feature_length"))?;
        let weights = weights.ok_or_else(|| missing("weights"))?;
        if weights.len() != len {
            return Err(bad(
                end,
                format!("feature_length {len} but {} weights", weights.len()),
            ));
        }
        Ok(Self {
            weights,
            bias: bias.ok_or_else(|| missing("bias"))?,
            training_meta: meta,
        })
    }
}

/// Mean logistic loss over a batch plus `l2 / 2 * |w|^2`, with its
/// gradient in `(weights, bias)`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[&[f64]],
    ys: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = weights
            .iter()
            .zip(x.iter())
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + bias;
        // log(1 + e^z) - y z, evaluated without overflow
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let r = sigmoid(z) - y;
        for (g, v) in gw.iter_mut().zip(x.iter()) {
            *g += r * v;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

/// Candidates of one training image with their features, aligned by index.
#[derive(Debug, Clone)]
pub struct TrainImage {
    pub image_id: String,
    pub candidates: Vec<Candidate>,
    pub features: Vec<FeatureVector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseLoss {
    pub iterations: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub final_loss: f64,
}

/// Seeded SGD over mini-batches drawn by [`sample_minibatch`]. Each step
/// picks `images_per_batch` images that have foreground candidates and is
/// offered the hard negatives harvested from those images. Returns the scorer and a loss
/// summary per phase.
pub fn train_scorer(
    images: &[TrainImage],
    hard_pool: &[(PoolEntry, FeatureVector)],
    sampler: &SamplerConfig,
    sgd: &SgdConfig,
    seed: u64,
    init: Option<&LinearScorer>,
    feature_len: usize,
) -> Result<(LinearScorer, Vec<PhaseLoss>), RefDetError> {
    let eligible: Vec<usize> = (0..images.len())
        .filter(|&i| {
            images[i]
                .candidates
                .iter()
                .any(|c| c.label.kind == crate::sampler::RoiKind::Foreground)
        })
        .collect();
    if eligible.is_empty() {
        return Err(RefDetError::NoForeground);
    }
    let pool_entries: Vec<PoolEntry> = hard_pool.iter().map(|(p, _)| p.clone()).collect();
    let pool_by_image: Vec<Vec<usize>> = images
        .iter()
        .map(|img| {
            (0..pool_entries.len())
                .filter(|&k| pool_entries[k].image_id == img.image_id)
                .collect()
        })
        .collect();

    let mut scorer = init
        .cloned()
        .unwrap_or_else(|| LinearScorer::zeros(feature_len));
    scorer.training_meta = TrainingMeta {
        phases: sgd.phases.clone(),
        momentum: sgd.momentum,
        weight_decay: sgd.weight_decay,
        seed,
    };
    let mut vel_w = vec![0.0; feature_len];
    let mut vel_b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_batch = sgd.images_per_batch.clamp(1, eligible.len());
    let mut summaries = Vec::with_capacity(sgd.phases.len());

    for phase in &sgd.phases {
        let mut loss_sum = 0.0;
        let mut last = 0.0;
        for _ in 0..phase.iterations {
            let picked: Vec<usize> = index::sample(&mut rng, eligible.len(), per_batch)
                .into_iter()
                .map(|k| eligible[k])
                .collect();
            let mut cands: Vec<Candidate> = Vec::new();
            let mut feats: Vec<&FeatureVector> = Vec::new();
            for &i in &picked {
                cands.extend(images[i].candidates.iter().cloned());
                feats.extend(images[i].features.iter());
            }
            let offered: Vec<usize> = picked
                .iter()
                .flat_map(|&i| pool_by_image[i].iter().copied())
                .collect();
            let step_pool: Vec<PoolEntry> =
                offered.iter().map(|&k| pool_entries[k].clone()).collect();
            let batch = match sample_minibatch(&cands, &step_pool, sampler, rng.gen()) {
                Ok(b) => b,
                Err(SamplerError::EmptyForeground) => continue,
                Err(e) => return Err(e.into()),
            };
            let mut xs: Vec<&[f64]> = Vec::with_capacity(batch.fg.len() + batch.bg.len());
            let mut ys = Vec::with_capacity(xs.capacity());
            for e in &batch.fg {
                xs.push(feats[e.source].values());
                ys.push(1.0);
            }
            for e in &batch.bg {
                let x = if e.is_hard {
                    hard_pool[offered[e.source]].1.values()
                } else {
                    feats[e.source].values()
                };
                xs.push(x);
                ys.push(0.0);
            }
            let (loss, mut gw, mut gb) =
                loss_and_gradient(&scorer.weights, scorer.bias, &xs, &ys, sgd.weight_decay);
            if sgd.reduction == BatchReduction::Sum {
                // Scale the data term only; decay stays per step.
                let n = xs.len() as f64;
                for (g, w) in gw.iter_mut().zip(&scorer.weights) {
                    let decay = sgd.weight_decay * w;
                    *g = (*g - decay) * n + decay;
                }
                gb *= n;
            }
            for ((w, v), g) in scorer.weights.iter_mut().zip(vel_w.iter_mut()).zip(&gw) {
                *v = sgd.momentum * *v - phase.learning_rate * g;
                *w += *v;
            }
            vel_b = sgd.momentum * vel_b - phase.learning_rate * gb;
            scorer.bias += vel_b;
            loss_sum += loss;
            last = loss;
        }
        summaries.push(PhaseLoss {
            iterations: phase.iterations,
            learning_rate: phase.learning_rate,
            mean_loss: loss_sum / phase.iterations.max(1) as f64,
            final_loss: last,
        });
    }
    Ok((scorer, summaries))
}
