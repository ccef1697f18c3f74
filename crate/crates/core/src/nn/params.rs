use std::hash::Hasher;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::attention::AttnParams;
use crate::nn::decoder::DecoderParams;
use crate::nn::gru::GruParams;
use crate::nn::tensor::Tensor;
use crate::nn::time_enc::init_frequencies;

/// Model widths. Embedding and decoder hidden widths equal `d_mem`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_nodes: usize,
    pub d_mem: usize,
    pub d_time: usize,
    pub d_edge: usize,
    /// Static memory width; 0 disables static memory.
    pub d_static: usize,
}

impl ModelDims {
    pub fn mail_dim(&self) -> usize {
        2 * self.d_mem + self.d_time + self.d_edge
    }

    /// Stored mail width (no time block).
    pub fn raw_mail_dim(&self) -> usize {
        2 * self.d_mem + self.d_edge
    }

    pub fn node_input_dim(&self) -> usize {
        self.d_mem + self.d_static
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_mem == 0 || self.d_time == 0 {
            return Err(Error::Config("d_mem and d_time must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub gru: GruParams,
    pub attn: AttnParams,
    pub omega: Tensor,
    pub static_table: Tensor,
    pub decoder: DecoderParams,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            gru: GruParams::zeros(dims.mail_dim(), dims.d_mem),
            attn: AttnParams::zeros(dims.node_input_dim(), dims.d_edge, dims.d_time, dims.d_mem),
            omega: Tensor::zeros(&[dims.d_time]),
            static_table: Tensor::zeros(&[dims.num_nodes, dims.d_static]),
            decoder: DecoderParams::zeros(dims.d_mem, dims.d_mem),
        }
    }

    /// Weight matrices uniform in ±1/√fan_in, biases and static table zero,
    /// frequencies log-spaced and scaled by `1 / max_t`.
    pub fn init(dims: ModelDims, max_t: f64, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in p.named_tensors_mut() {
            if t.shape().len() == 2 && name != "static_table" {
                let bound = 1.0 / (t.cols() as f64).sqrt();
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
            }
        }
        p.omega.data_mut().copy_from_slice(&init_frequencies(dims.d_time, max_t));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("gru.w_z", &self.gru.w_z),
            ("gru.w_r", &self.gru.w_r),
            ("gru.w_h", &self.gru.w_h),
            ("gru.b_z", &self.gru.b_z),
            ("gru.b_r", &self.gru.b_r),
            ("gru.b_h", &self.gru.b_h),
            ("attn.w_q", &self.attn.w_q),
            ("attn.b_q", &self.attn.b_q),
            ("attn.w_k", &self.attn.w_k),
            ("attn.b_k", &self.attn.b_k),
            ("attn.w_v", &self.attn.w_v),
            ("attn.b_v", &self.attn.b_v),
            ("time.omega", &self.omega),
            ("static_table", &self.static_table),
            ("decoder.w1", &self.decoder.w1),
            ("decoder.b1", &self.decoder.b1),
            ("decoder.w2", &self.decoder.w2),
            ("decoder.b2", &self.decoder.b2),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("gru.w_z", &mut self.gru.w_z),
            ("gru.w_r", &mut self.gru.w_r),
            ("gru.w_h", &mut self.gru.w_h),
            ("gru.b_z", &mut self.gru.b_z),
            ("gru.b_r", &mut self.gru.b_r),
            ("gru.b_h", &mut self.gru.b_h),
            ("attn.w_q", &mut self.attn.w_q),
            ("attn.b_q", &mut self.attn.b_q),
            ("attn.w_k", &mut self.attn.w_k),
            ("attn.b_k", &mut self.attn.b_k),
            ("attn.w_v", &mut self.attn.w_v),
            ("attn.b_v", &mut self.attn.b_v),
            ("time.omega", &mut self.omega),
            ("static_table", &mut self.static_table),
            ("decoder.w1", &mut self.decoder.w1),
            ("decoder.b1", &mut self.decoder.b1),
            ("decoder.w2", &mut self.decoder.w2),
            ("decoder.b2", &mut self.decoder.b2),
        ]
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let theirs = other.tensor_list();
        for ((_, mine), theirs) in self.named_tensors_mut().into_iter().zip(theirs) {
            mine.add_assign(theirs);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.named_tensors_mut() {
            t.scale(k);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensor_list().iter().map(|t| t.sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensor_list().iter().all(|t| t.is_finite())
    }

    pub fn tensor_list(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn static_row(&self, v: usize) -> &[f64] {
        if self.dims.d_static == 0 {
            &[]
        } else {
            self.static_table.row(v)
        }
    }

    /// Hash over the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.tensor_list() {
            for x in t.data() {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }
}
