//! Random small instances for finite-difference checks of every tape op,
//! every loss and the composed BYOL networks.

use ecg_ssl::autodiff::{gradcheck, GradCheck, Tape, Tensor, Var};
use ecg_ssl::nn::{
    forward_encoder, forward_projection, init_ssl_params, ConvBlock, EncoderConfig, ParamVars,
};
use ecg_ssl::objectives::{
    byol_loss, byol_symmetric_loss, nt_xent_loss, swav_loss_with_codes, ByolNetworks,
};
use ecg_ssl::rng::RngStream;
use ecg_ssl::Result;

pub const INSTANCES: u64 = 20;
pub const TOLERANCE: f64 = 1e-4;

pub type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Make = Box<dyn Fn(&mut RngStream, u64) -> (Vec<Tensor>, Loss)>;

pub struct GradCase {
    pub name: &'static str,
    pub cfg: GradCheck,
    make: Make,
}

fn case(
    name: &'static str,
    make: impl Fn(&mut RngStream, u64) -> (Vec<Tensor>, Loss) + 'static,
) -> GradCase {
    case_with(name, GradCheck::default(), make)
}

fn case_with(
    name: &'static str,
    cfg: GradCheck,
    make: impl Fn(&mut RngStream, u64) -> (Vec<Tensor>, Loss) + 'static,
) -> GradCase {
    GradCase {
        name,
        cfg,
        make: Box::new(make),
    }
}

impl GradCase {
    /// Worst relative error over [`INSTANCES`] instances, or a description
    /// of the first instance above [`TOLERANCE`].
    pub fn run(&self) -> std::result::Result<f64, String> {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = RngStream::new(1000 + i);
            let (inputs, f) = (self.make)(&mut rng, 77 + i);
            let r = gradcheck(&inputs, f, self.cfg)
                .map_err(|e| format!("{} instance {i}: {e}", self.name))?;
            if r.n_checked == 0 || !(r.max_rel_error < TOLERANCE) {
                return Err(format!(
                    "{} instance {i}: rel error {:.3e} at {:?} (analytic {}, numeric {})",
                    self.name, r.max_rel_error, r.worst, r.analytic, r.numeric
                ));
            }
            worst = worst.max(r.max_rel_error);
        }
        Ok(worst)
    }
}

/// Every differentiable tape op.
pub fn op_cases() -> Vec<GradCase> {
    [
        elementwise_binary_ops(),
        elementwise_unary_ops(),
        matrix_ops(),
        sequence_ops(),
        normalization_ops(),
        reductions(),
    ]
    .into_iter()
    .flatten()
    .collect()
}

fn rand_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

/// Entries with magnitude in `[0.1, 1]`, away from ReLU and norm kinks.
fn rand_away_from_zero(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.uniform(0.1, 1.0);
            if rng.uniform(0.0, 1.0) < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn dim(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// `sum(out * W)` with fixed pseudo-random `W`, so every output entry
/// contributes with a distinct weight.
fn project(t: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(out).to_vec();
    let mut rng = RngStream::new(seed);
    let w = rand_tensor(&mut rng, &shape);
    let wv = t.constant(&w);
    let m = t.mul(out, wv)?;
    Ok(t.sum(m))
}

fn binary(
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> impl Fn(&mut RngStream, u64) -> (Vec<Tensor>, Loss) {
    move |rng, seed| {
        let shape = [dim(rng, 1, 4), dim(rng, 1, 5)];
        let inputs = vec![rand_tensor(rng, &shape), rand_tensor(rng, &shape)];
        let f: Loss = Box::new(move |t, v| {
            let o = op(t, v[0], v[1])?;
            project(t, o, seed)
        });
        (inputs, f)
    }
}

fn elementwise_binary_ops() -> Vec<GradCase> {
    vec![
        case("add", binary(|t, a, b| t.add(a, b))),
        case("sub", binary(|t, a, b| t.sub(a, b))),
        case("mul", binary(|t, a, b| t.mul(a, b))),
    ]
}

fn elementwise_unary_ops() -> Vec<GradCase> {
    vec![
        case("scale", |rng, seed| {
            let c = rng.uniform(-3.0, 3.0);
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.scale(v[0], c);
                    project(t, o, seed)
                }),
            )
        }),
        case("add_scalar", |rng, seed| {
            let c = rng.uniform(-3.0, 3.0);
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.add_scalar(v[0], c);
                    project(t, o, seed)
                }),
            )
        }),
        case("exp", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.exp(v[0]);
                    project(t, o, seed)
                }),
            )
        }),
        case("relu", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_away_from_zero(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.relu(v[0]);
                    project(t, o, seed)
                }),
            )
        }),
    ]
}

fn matrix_ops() -> Vec<GradCase> {
    vec![
        case("matmul_bt", |rng, seed| {
            let (m, n, k) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 5));
            (
                vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[n, k])],
                Box::new(move |t, v| {
                    let o = t.matmul_bt(v[0], v[1])?;
                    project(t, o, seed)
                }),
            )
        }),
        case("linear", |rng, seed| {
            let (m, n, k) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 5));
            let inputs = vec![
                rand_tensor(rng, &[m, k]),
                rand_tensor(rng, &[n, k]),
                rand_tensor(rng, &[n]),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let o = t.linear(v[0], v[1], v[2])?;
                    project(t, o, seed)
                }),
            )
        }),
        case("add_row_bias", |rng, seed| {
            let (m, n) = (dim(rng, 1, 4), dim(rng, 1, 5));
            (
                vec![rand_tensor(rng, &[m, n]), rand_tensor(rng, &[n])],
                Box::new(move |t, v| {
                    let o = t.add_row_bias(v[0], v[1])?;
                    project(t, o, seed)
                }),
            )
        }),
        case("concat_rows", |rng, seed| {
            let n = dim(rng, 1, 4);
            let inputs = vec![
                {
                    let s = [dim(rng, 1, 3), n];
                    rand_tensor(rng, &s)
                },
                {
                    let s = [dim(rng, 1, 3), n];
                    rand_tensor(rng, &s)
                },
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let o = t.concat_rows(v[0], v[1])?;
                    project(t, o, seed)
                }),
            )
        }),
    ]
}

fn sequence_ops() -> Vec<GradCase> {
    vec![
        case("conv1d", |rng, seed| {
            let (b, c, o) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
            let k = [1, 3, 5][rng.below(3)];
            let stride = dim(rng, 1, 3);
            let pad = rng.below(k / 2 + 1);
            let l = dim(rng, k.max(2), 9);
            let inputs = vec![rand_tensor(rng, &[b, c, l]), rand_tensor(rng, &[o, c, k])];
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv1d(v[0], v[1], stride, pad)?;
                    project(t, y, seed)
                }),
            )
        }),
        case("add_channel_bias", |rng, seed| {
            let (b, c, l) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 5));
            (
                vec![rand_tensor(rng, &[b, c, l]), rand_tensor(rng, &[c])],
                Box::new(move |t, v| {
                    let o = t.add_channel_bias(v[0], v[1])?;
                    project(t, o, seed)
                }),
            )
        }),
        case("mean_time", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 6)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.mean_time(v[0])?;
                    project(t, o, seed)
                }),
            )
        }),
    ]
}

fn normalization_ops() -> Vec<GradCase> {
    vec![
        case("batch_norm", |rng, seed| {
            let (b, d) = (dim(rng, 3, 6), dim(rng, 1, 4));
            let inputs = vec![
                rand_tensor(rng, &[b, d]),
                rand_tensor(rng, &[d]),
                rand_tensor(rng, &[d]),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let o = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
                    project(t, o, seed)
                }),
            )
        }),
        case("l2_normalize_rows", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
                rand_away_from_zero(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let (o, _) = t.l2_normalize_rows(v[0])?;
                    project(t, o, seed)
                }),
            )
        }),
        case("log_softmax_rows", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.log_softmax_rows(v[0], false)?;
                    project(t, o, seed)
                }),
            )
        }),
        case("log_softmax_rows without diagonal", |rng, seed| {
            let n = dim(rng, 2, 5);
            (
                vec![rand_tensor(rng, &[n, n])],
                Box::new(move |t, v| {
                    let o = t.log_softmax_rows(v[0], true)?;
                    project(t, o, seed)
                }),
            )
        }),
        case("softmax_rows", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let o = t.softmax_rows(v[0])?;
                    project(t, o, seed)
                }),
            )
        }),
    ]
}

fn reductions() -> Vec<GradCase> {
    vec![
        case("sum", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let s = t.sum(v[0]);
                    project(t, s, seed)
                }),
            )
        }),
        case("mean", |rng, seed| {
            let x = {
                let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
                rand_tensor(rng, &s)
            };
            (
                vec![x],
                Box::new(move |t, v| {
                    let s = t.mean(v[0]);
                    project(t, s, seed)
                }),
            )
        }),
        case("bce_with_logits", |rng, _| {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 4)];
            let n = shape[0] * shape[1];
            let targets: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            let logits = Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.uniform(-4.0, 4.0)).collect(),
            )
            .unwrap();
            (
                vec![logits],
                Box::new(move |t, v| t.bce_with_logits(v[0], targets.clone())),
            )
        }),
    ]
}

/// NT-Xent, BYOL with a constant target, and SwAV with codes held fixed.
pub fn loss_cases() -> Vec<GradCase> {
    vec![case("nt_xent", |rng, _| {
        let (b, d) = (dim(rng, 1, 5), dim(rng, 2, 6));
        let tau = rng.uniform(0.1, 1.0);
        (
            vec![
                rand_away_from_zero(rng, &[b, d]),
                rand_away_from_zero(rng, &[b, d]),
            ],
            Box::new(move |t, v| nt_xent_loss(t, v[0], v[1], tau)),
        )
    })]
    .into_iter()
    .chain(byol_cases())
    .chain(swav_cases())
    .collect()
}

fn byol_cases() -> Vec<GradCase> {
    vec![case("byol", |rng, seed| {
        let (b, d) = (dim(rng, 1, 5), dim(rng, 2, 6));
        let q = rand_away_from_zero(rng, &[b, d]);
        (
            vec![q],
            Box::new(move |t, v| {
                let mut r = RngStream::new(seed);
                let target = t.constant(&rand_away_from_zero(&mut r, &[b, d]));
                byol_loss(t, v[0], target)
            }),
        )
    })]
}

fn tiny_encoder(rng: &mut RngStream) -> EncoderConfig {
    EncoderConfig {
        n_leads: dim(rng, 1, 2),
        conv_blocks: vec![ConvBlock {
            out_channels: dim(rng, 5, 6),
            kernel_size: 3,
            stride: dim(rng, 1, 2),
        }],
        embedding_dim: 5,
        projection_dim: 4,
        prediction_hidden: dim(rng, 4, 5),
    }
}

/// Sinusoids with per-sample amplitude, frequency and offset. Plain noise
/// averages out under time pooling, leaving the batch-norm statistics
/// nearly degenerate and the finite differences dominated by curvature.
fn sample_views(rng: &mut RngStream, b: usize, c: usize, l: usize) -> Tensor {
    let mut v = Vec::with_capacity(b * c * l);
    for _ in 0..b {
        let (amp, freq, offset) = (
            rng.uniform(0.5, 2.0),
            rng.uniform(0.1, 1.0),
            rng.uniform(-3.0, 3.0),
        );
        for ch in 0..c {
            v.extend((0..l).map(|t| amp * (freq * t as f64 + ch as f64).sin() + offset));
        }
    }
    Tensor::new(vec![b, c, l], v).unwrap()
}

/// Smallest per-unit batch standard deviation at the inputs of the two
/// batch-norm layers of the online network.
fn min_batch_norm_input_std(
    names: &[String],
    inputs: &[Tensor],
    config: &EncoderConfig,
    view: &Tensor,
) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x)).collect();
    let p = ParamVars::new(names.to_vec(), vars).unwrap();
    let x = t.constant(view);
    let h = forward_encoder(&mut t, &p, config, x).unwrap();
    let z = forward_projection(&mut t, &p, h).unwrap();
    let mut smallest = f64::INFINITY;
    for (prefix, input) in [("projection", h), ("predictor", z)] {
        let w = p.get(&format!("{prefix}.fc1.weight")).unwrap();
        let b = p.get(&format!("{prefix}.fc1.bias")).unwrap();
        let a = t.linear(input, w, b).unwrap();
        let (rows, cols) = (t.shape(a)[0], t.shape(a)[1]);
        let v = t.value(a);
        for j in 0..cols {
            let mean = (0..rows).map(|r| v[r * cols + j]).sum::<f64>() / rows as f64;
            let var = (0..rows)
                .map(|r| (v[r * cols + j] - mean).powi(2))
                .sum::<f64>()
                / rows as f64;
            smallest = smallest.min(var.sqrt());
        }
    }
    smallest
}

/// End-to-end BYOL check through encoder, projection and predictor. The
/// composition is far more curved than any single op, so a smaller step keeps
/// truncation below the tolerance. Batch norm cancels constant shifts, so the
/// gradients of the biases upstream of projection.bn1 are exactly zero and
/// their numeric values are roundoff; entries below 1e-4 are held to an
/// absolute 1e-8.
pub fn network_cases() -> Vec<GradCase> {
    let cfg = GradCheck {
        step: 1e-5,
        floor: 1e-4,
    };
    vec![case_with("byol_symmetric", cfg, |rng, seed| {
        // Redraw until every batch-norm unit sees a batch spread of at least
        // 0.1: the truncation error of the differences grows like 1 / std^2.
        for attempt in 0.. {
            let config = tiny_encoder(rng);
            let b = dim(rng, 10, 12);
            let l = dim(rng, 6, 8);
            let online = init_ssl_params(&config, seed + 1000 * attempt).unwrap();
            let mut target = init_ssl_params(&config, seed + 1000 * attempt + 1).unwrap();
            for (_, t) in target.iter_mut() {
                for v in t.values_mut() {
                    *v += rng.uniform(-0.1, 0.1);
                }
            }
            let names: Vec<String> = online.names().into_iter().map(str::to_string).collect();
            let mut inputs: Vec<Tensor> = online.iter().map(|(_, t)| t.clone()).collect();
            // Shift the biases feeding each ReLU past the largest reachable
            // pre-activation so the loss is smooth; relu is checked on its own.
            // Conv outputs are bounded by 5 * sqrt(3 * fan_in) and normalized
            // activations by sqrt(B - 1).
            for (name, t) in names.iter().zip(inputs.iter_mut()) {
                let shift = if name.starts_with("encoder.conv") && name.ends_with(".bias") {
                    40.0
                } else if name.ends_with("bn1.bias") {
                    4.0
                } else {
                    0.0
                };
                for v in t.values_mut() {
                    *v += shift + rng.uniform(-0.1, 0.1);
                }
            }
            let view_i = sample_views(rng, b, config.n_leads, l);
            let view_j = sample_views(rng, b, config.n_leads, l);
            let spread = min_batch_norm_input_std(&names, &inputs, &config, &view_i)
                .min(min_batch_norm_input_std(&names, &inputs, &config, &view_j));
            if spread < 0.1 {
                continue;
            }
            return (
                inputs,
                Box::new(move |t: &mut Tape, v: &[Var]| {
                    let online = ParamVars::new(names.clone(), v.to_vec())?;
                    let target = target.bind(t, false);
                    let xi = t.constant(&view_i);
                    let xj = t.constant(&view_j);
                    let nets = ByolNetworks {
                        online: &online,
                        target: &target,
                        config: &config,
                    };
                    byol_symmetric_loss(t, xi, xj, &nets)
                }) as Loss,
            );
        }
        unreachable!()
    })]
}

fn swav_cases() -> Vec<GradCase> {
    vec![case("swav", |rng, _| {
        let (b, d, k) = (dim(rng, 2, 5), dim(rng, 2, 5), dim(rng, 2, 4));
        let tau = rng.uniform(0.1, 1.0);
        let mut codes = || -> Vec<f64> {
            (0..b)
                .flat_map(|_| {
                    let raw: Vec<f64> = (0..k).map(|_| rng.uniform(0.05, 1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(move |x| x / s)
                })
                .collect()
        };
        let (qi, qj) = (codes(), codes());
        let inputs = vec![
            rand_tensor(rng, &[b, d]),
            rand_tensor(rng, &[b, d]),
            rand_tensor(rng, &[k, d]),
        ];
        (
            inputs,
            Box::new(move |t, v| swav_loss_with_codes(t, v[0], v[1], v[2], &qi, &qj, tau)),
        )
    })]
}
