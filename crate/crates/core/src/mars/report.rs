use serde::{Deserialize, Serialize};

use crate::nn::ParameterSet;

/// Parameter counts of the backbone and of the add-on modules around it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub backbone: usize,
    /// Point embedder f_e plus temporal embeddings.
    pub cffe: usize,
    /// f_u and f_m.
    pub bev_branch: usize,
    pub heads: usize,
}

impl ParamReport {
    pub fn from_params(params: &ParameterSet) -> Self {
        ParamReport {
            backbone: params.count_with_prefix("backbone."),
            cffe: params.count_with_prefix("cffe."),
            bev_branch: params.count_with_prefix("bev."),
            heads: params.count_with_prefix("head."),
        }
    }

    pub fn module_total(&self) -> usize {
        self.cffe + self.bev_branch + self.heads
    }

    pub fn total(&self) -> usize {
        self.backbone + self.module_total()
    }

    /// Module parameters as a fraction of backbone parameters.
    pub fn overhead(&self) -> f64 {
        self.module_total() as f64 / self.backbone as f64
    }

    pub fn to_text(&self) -> String {
        format!(
            "backbone {}\ncffe {}\nbev_branch {}\nheads {}\nmodule_total {}\noverhead {:.4}\n",
            self.backbone,
            self.cffe,
            self.bev_branch,
            self.heads,
            self.module_total(),
            self.overhead()
        )
    }
}
