use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::{compose_label, ClassTaxonomy, LabelCode};
use crate::nn::params::{bias_uniform, kaiming_uniform};
use crate::nn::{sigmoid, Binding, Graph, ParameterSet, Tensor, Var};

use super::config::MarsConfig;
use super::sample::{bev_tensor, PreparedSample};

/// Weight and optional bias of an affine or convolution layer on a graph.
#[derive(Clone, Copy, Debug)]
pub struct Layer {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Layer {
    pub fn bind(b: &Binding, prefix: &str) -> Result<Self> {
        let bias_name = format!("{prefix}.bias");
        Ok(Layer {
            weight: b.var(&format!("{prefix}.weight"))?,
            bias: if b.has(&bias_name) { Some(b.var(&bias_name)?) } else { None },
        })
    }

    pub fn linear(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.weight, self.bias)
    }

    pub fn conv(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BackboneLayers {
    pub mlp1: Layer,
    pub mlp2: Layer,
    pub proj: Layer,
}

#[derive(Clone, Copy, Debug)]
pub struct UnetLayers {
    pub enc1: Layer,
    pub enc2: Layer,
    pub bottleneck: Layer,
    pub dec2: Layer,
    pub dec1: Layer,
    pub out: Layer,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadLayers {
    pub cls1: Layer,
    pub cls2: Layer,
    pub mot1: Layer,
    pub mot2: Layer,
}

/// Per-point embedding `f_e(descriptor) + e_frame`, or just `f_e` without
/// temporal embeddings.
pub fn cffe_embed(
    g: &mut Graph,
    descriptors: Var,
    f_e: Layer,
    temporal: Option<Var>,
    frame_of: &[usize],
) -> Result<Var> {
    let base = f_e.linear(g, descriptors)?;
    match temporal {
        None => Ok(base),
        Some(e) => {
            let k = g.shape(e)[0];
            if let Some(&bad) = frame_of.iter().find(|&&f| f >= k) {
                return Err(Error::Arity {
                    what: "temporal embeddings for frame",
                    expected: bad + 1,
                    actual: k,
                });
            }
            let per_point = g.gather_rows(e, frame_of)?;
            g.add(base, per_point)
        }
    }
}

/// Point MLP, one voxel-mean aggregation round, and a projection of `[h | voxel mean]`.
pub fn toy_backbone_forward(
    g: &mut Graph,
    embedded: Var,
    layers: &BackboneLayers,
    voxel_of: &[usize],
    num_voxels: usize,
) -> Result<Var> {
    let h = layers.mlp1.linear(g, embedded)?;
    let h = g.relu(h);
    let h = layers.mlp2.linear(g, h)?;
    let h = g.relu(h);
    let pooled = g.segment_mean(h, voxel_of, num_voxels)?;
    let back = g.gather_rows(pooled, voxel_of)?;
    let cat = g.concat_cols(&[h, back])?;
    layers.proj.linear(g, cat)
}

/// The shared BEV encoder f_u: two pooled encoder levels, a bottleneck, and a decoder with
/// skip connections, then a 1×1 output layer.
pub fn unet_forward(g: &mut Graph, input: Var, u: &UnetLayers) -> Result<Var> {
    let e1 = u.enc1.conv(g, input)?;
    let e1 = g.relu(e1);
    let p1 = g.max_pool2(e1)?;
    let e2 = u.enc2.conv(g, p1)?;
    let e2 = g.relu(e2);
    let p2 = g.max_pool2(e2)?;
    let bt = u.bottleneck.conv(g, p2)?;
    let bt = g.relu(bt);
    let up2 = g.upsample2(bt)?;
    let c2 = g.concat0(&[up2, e2])?;
    let d2 = u.dec2.conv(g, c2)?;
    let d2 = g.relu(d2);
    let up1 = g.upsample2(d2)?;
    let c1 = g.concat0(&[up1, e1])?;
    let d1 = u.dec1.conv(g, c1)?;
    let d1 = g.relu(d1);
    u.out.conv(g, d1)
}

/// f_m: every branch sees the same input; outputs are rectified and stacked in branch order.
pub fn motion_features(g: &mut Graph, input: Var, branches: &[Layer]) -> Result<Var> {
    let outs = branches
        .iter()
        .map(|br| {
            let y = br.conv(g, input)?;
            Ok(g.relu(y))
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat0(&outs)
}

/// Output of [`mafl`].
#[derive(Clone, Copy, Debug)]
pub struct MaflOutput {
    /// `[D_z, H, W]`.
    pub motion: Var,
    /// `[(k-1)·D_u, H, W]`: `U_k - U_i` for i = 1..k-1, stacked in frame order.
    pub diffs: Var,
}

pub fn mafl(g: &mut Graph, bev_frames: &[Var], unet: &UnetLayers, branches: &[Layer]) -> Result<MaflOutput> {
    if bev_frames.len() < 2 {
        return Err(Error::UnsupportedSample(
            "motion differencing needs at least two frames".into(),
        ));
    }
    let shape = g.shape(bev_frames[0]).to_vec();
    if bev_frames.iter().any(|&v| g.shape(v) != shape.as_slice()) {
        return Err(Error::Config("BEV frames have different grid shapes".into()));
    }
    let encoded = bev_frames
        .iter()
        .map(|&b| unet_forward(g, b, unet))
        .collect::<Result<Vec<_>>>()?;
    let (last, rest) = encoded.split_last().expect("at least two frames");
    let diffs = rest
        .iter()
        .map(|&u| g.sub(*last, u))
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.concat0(&diffs)?;
    let motion = motion_features(g, stacked, branches)?;
    Ok(MaflOutput {
        motion,
        diffs: stacked,
    })
}

/// `[P^s | Z at the point's pillar]`, zeros for points outside the grid.
pub fn fuse(g: &mut Graph, point_features: Var, motion: Var, pixels: &[Option<usize>]) -> Result<Var> {
    let z = g.gather_pixels(motion, pixels)?;
    g.concat_cols(&[point_features, z])
}

/// Category logits `[N, C]` and motion logits `[N, 1]`.
pub fn predict(g: &mut Graph, fused: Var, heads: &HeadLayers) -> Result<(Var, Var)> {
    let c = heads.cls1.linear(g, fused)?;
    let c = g.relu(c);
    let c = heads.cls2.linear(g, c)?;
    let m = heads.mot1.linear(g, fused)?;
    let m = g.relu(m);
    let m = heads.mot2.linear(g, m)?;
    Ok((c, m))
}

/// Argmax class (lowest id on ties); moving only for movable classes with `σ(s^m) > 0.5`.
pub fn gated_inference(
    class_logits: &[f64],
    motion_logits: &[f64],
    tax: &ClassTaxonomy,
) -> Result<Vec<LabelCode>> {
    let c = tax.num_classes();
    if class_logits.len() != motion_logits.len() * c {
        return Err(Error::Arity {
            what: "class logits per point",
            expected: motion_logits.len() * c,
            actual: class_logits.len(),
        });
    }
    class_logits
        .chunks_exact(c)
        .zip(motion_logits)
        .map(|(row, &m)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            let id = best as u16;
            let moving = tax.is_movable(id) && sigmoid(m) > 0.5;
            compose_label(id, moving, tax)
        })
        .collect()
}

/// One parameter tensor the architecture needs: name, shape, fan-in.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, din: usize, dout: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![dout, din],
        fan_in: din,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![dout],
        fan_in: din,
    });
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![cout, cin, k, k],
        fan_in: cin * k * k,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![cout],
        fan_in: cin * k * k,
    });
}

/// Every parameter of `cfg`, in initialization order.
pub fn param_specs(cfg: &MarsConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    push_linear(&mut out, "cffe.embed", cfg.input_dim, cfg.embed_dim);
    if cfg.use_cffe {
        out.push(ParamSpec {
            name: "cffe.temporal".into(),
            shape: vec![cfg.frames, cfg.embed_dim],
            fan_in: cfg.embed_dim,
        });
    }
    push_linear(&mut out, "backbone.mlp1", cfg.embed_dim, cfg.backbone_hidden);
    push_linear(&mut out, "backbone.mlp2", cfg.backbone_hidden, cfg.backbone_hidden);
    push_linear(&mut out, "backbone.proj", 2 * cfg.backbone_hidden, cfg.point_dim);
    if cfg.bev_active() {
        let u = cfg.unet;
        push_conv(&mut out, "bev.unet.enc1", crate::bev::BEV_CHANNELS, u.enc1, 3);
        push_conv(&mut out, "bev.unet.enc2", u.enc1, u.enc2, 3);
        push_conv(&mut out, "bev.unet.bottleneck", u.enc2, u.bottleneck, 3);
        push_conv(&mut out, "bev.unet.dec2", u.bottleneck + u.enc2, u.enc2, 3);
        push_conv(&mut out, "bev.unet.dec1", u.enc2 + u.enc1, u.out, 3);
        push_conv(&mut out, "bev.unet.out", u.out, u.out, 1);
        for &k in &cfg.kernels {
            push_conv(&mut out, &format!("bev.fm.k{k}"), cfg.fm_in_channels(), cfg.branch_channels, k);
        }
    }
    let fused = cfg.fused_dim();
    push_linear(&mut out, "head.cls.fc1", fused, cfg.head_hidden);
    push_linear(&mut out, "head.cls.fc2", cfg.head_hidden, cfg.num_classes);
    push_linear(&mut out, "head.motion.fc1", fused, cfg.head_hidden);
    push_linear(&mut out, "head.motion.fc2", cfg.head_hidden, 1);
    out
}

/// Graph nodes produced by [`MarsModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub class_logits: Var,
    pub motion_logits: Var,
    pub point_features: Var,
    pub mafl: Option<MaflOutput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarsModel {
    pub config: MarsConfig,
    pub params: ParameterSet,
}

impl MarsModel {
    /// Fresh model with seeded fan-in uniform initialization.
    pub fn new(config: MarsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for spec in param_specs(&config) {
            let t = if spec.name.ends_with(".weight") {
                kaiming_uniform(&spec.shape, spec.fan_in, &mut rng)
            } else {
                bias_uniform(&spec.shape, spec.fan_in, &mut rng)
            };
            params.insert(spec.name, t)?;
        }
        Ok(MarsModel { config, params })
    }

    /// Wraps loaded parameters, checking names and shapes against the architecture.
    pub fn from_params(config: MarsConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::ManifestMismatch(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                specs.len()
            )));
        }
        for s in &specs {
            match params.get(&s.name) {
                Some(t) if t.shape() == s.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::ManifestMismatch(format!(
                        "{} has shape {:?}, architecture needs {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                None => return Err(Error::ManifestMismatch(format!("checkpoint lacks {}", s.name))),
            }
        }
        Ok(MarsModel { config, params })
    }

    fn check_sample(&self, s: &PreparedSample) -> Result<()> {
        if s.k != self.config.frames {
            return Err(Error::ManifestMismatch(format!(
                "model expects {} frames, sample has {}",
                self.config.frames, s.k
            )));
        }
        if s.bev_fused.config != self.config.bev {
            return Err(Error::ManifestMismatch("sample BEV grid differs from the model's".into()));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, s: &PreparedSample) -> Result<ForwardOutput> {
        self.check_sample(s)?;
        let cfg = &self.config;
        let desc = g.constant(s.descriptors.clone());
        let temporal = if cfg.use_cffe { Some(b.var("cffe.temporal")?) } else { None };
        let embedded = cffe_embed(g, desc, Layer::bind(b, "cffe.embed")?, temporal, &s.frame_of)?;
        let backbone = BackboneLayers {
            mlp1: Layer::bind(b, "backbone.mlp1")?,
            mlp2: Layer::bind(b, "backbone.mlp2")?,
            proj: Layer::bind(b, "backbone.proj")?,
        };
        let ps = toy_backbone_forward(g, embedded, &backbone, &s.voxel_of, s.num_voxels)?;
        let ps_target = g.gather_rows(ps, &s.target_rows)?;

        let mut mafl_out = None;
        let fused = if !cfg.use_bev {
            ps_target
        } else if !cfg.bev_active() {
            let (h, w) = (cfg.bev.height, cfg.bev.width);
            let zeros = g.constant(Tensor::zeros(&[cfg.motion_dim(), h, w]));
            fuse(g, ps_target, zeros, &s.target_pixels)?
        } else {
            let unet = UnetLayers {
                enc1: Layer::bind(b, "bev.unet.enc1")?,
                enc2: Layer::bind(b, "bev.unet.enc2")?,
                bottleneck: Layer::bind(b, "bev.unet.bottleneck")?,
                dec2: Layer::bind(b, "bev.unet.dec2")?,
                dec1: Layer::bind(b, "bev.unet.dec1")?,
                out: Layer::bind(b, "bev.unet.out")?,
            };
            let branches = cfg
                .kernels
                .iter()
                .map(|k| Layer::bind(b, &format!("bev.fm.k{k}")))
                .collect::<Result<Vec<_>>>()?;
            let motion = if cfg.use_mafl {
                let grids: Vec<Var> = s.bev_frames.iter().map(|grid| g.constant(bev_tensor(grid))).collect();
                let out = mafl(g, &grids, &unet, &branches)?;
                mafl_out = Some(out);
                out.motion
            } else {
                let grid = g.constant(bev_tensor(&s.bev_fused));
                let u = unet_forward(g, grid, &unet)?;
                motion_features(g, u, &branches)?
            };
            fuse(g, ps_target, motion, &s.target_pixels)?
        };
        let heads = HeadLayers {
            cls1: Layer::bind(b, "head.cls.fc1")?,
            cls2: Layer::bind(b, "head.cls.fc2")?,
            mot1: Layer::bind(b, "head.motion.fc1")?,
            mot2: Layer::bind(b, "head.motion.fc2")?,
        };
        let (class_logits, motion_logits) = predict(g, fused, &heads)?;
        Ok(ForwardOutput {
            class_logits,
            motion_logits,
            point_features: ps,
            mafl: mafl_out,
        })
    }

    /// Gated composite labels for the target frame's points.
    pub fn infer(&self, s: &PreparedSample, tax: &ClassTaxonomy) -> Result<Vec<LabelCode>> {
        if tax.num_classes() != self.config.num_classes {
            return Err(Error::ManifestMismatch(format!(
                "model has {} classes, taxonomy has {}",
                self.config.num_classes,
                tax.num_classes()
            )));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let out = self.forward(&mut g, &b, s)?;
        gated_inference(
            g.value(out.class_logits).data(),
            g.value(out.motion_logits).data(),
            tax,
        )
    }

    /// Per-pixel mean of `|D_i|` over all difference channels, row-major `[H, W]`.
    pub fn discrepancy_map(&self, s: &PreparedSample) -> Result<Vec<f64>> {
        if s.k < 2 {
            return Err(Error::UnsupportedSample(format!(
                "discrepancy maps need at least two frames, sample has {}",
                s.k
            )));
        }
        if !self.config.use_mafl {
            return Err(Error::UnsupportedSample(
                "model was trained without motion differencing".into(),
            ));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let out = self.forward(&mut g, &b, s)?;
        let diffs = g.value(out.mafl.expect("MAFL ran").diffs);
        let (c, hw) = (diffs.dim(0), diffs.dim(1) * diffs.dim(2));
        let mut map = vec![0.0; hw];
        for ch in diffs.data().chunks_exact(hw) {
            for (m, v) in map.iter_mut().zip(ch) {
                *m += v.abs();
            }
        }
        map.iter_mut().for_each(|m| *m /= c as f64);
        Ok(map)
    }
}
