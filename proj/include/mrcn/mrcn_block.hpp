#pragma once

#include <map>
#include <vector>

#include "mrcn/attention.hpp"
#include "mrcn/branch.hpp"
#include "mrcn/modality_norm.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

// The six per-pair maps produced by the block. Restituted/compensated maps are
// only populated when the corresponding module is enabled.
struct MrcnBranches {
  FeatureMap f_v, f_n;              // originals, passed through unchanged
  FeatureMap f_v_plus, f_n_plus;    // restituted (MRM)
  FeatureMap f_v_minus, f_n_minus;  // compensated (MCM); tag follows the normalized base
  bool has_restituted = false;
  bool has_compensated = false;

  std::vector<Branch> active() const;
  const FeatureMap& map(Branch b) const;
  FeatureMap& map(Branch b);
};

// F+ = F_norm + M_plus (same modality).
FeatureMap mrm_restitute(const FeatureMap& f_norm, const FeatureMap& m_plus);

// F- = F_norm + M_minus_other (residual from the opposite modality).
FeatureMap mcm_compensate(const FeatureMap& f_norm, const FeatureMap& m_minus_other);

// Intermediates needed to backprop a forward_pair call.
struct MrcnBlockCache {
  Tensor f_v, f_n;          // block inputs
  Tensor norm_v, norm_n;    // IN outputs
  Tensor res_v, res_n;      // residuals
};

// Grad wrt the block inputs plus accumulated parameter grads.
struct MrcnBlockGrads {
  Tensor f_v;
  Tensor f_n;
};

// Modality normalization + residual distillation block. Holds the two IN
// layers and the four SE gates; the backbone around it lives in network.hpp.
class MrcnBlock {
 public:
  MrcnBlock() = default;
  MrcnBlock(std::size_t channels, bool use_mrm, bool use_mcm, std::size_t reduction = 16);

  void init(Rng& rng);

  MrcnBranches forward_pair(const FeatureMap& batch_v, const FeatureMap& batch_n,
                            MrcnBlockCache* cache = nullptr) const;
  MrcnBlockGrads backward_pair(const MrcnBlockCache& cache,
                               const std::map<Branch, Tensor>& grad_branches);

  // Inference path: normalize + restitute one batch with its own modality's
  // IN and first attention gate. Requires use_mrm.
  FeatureMap forward_mrm_single(const FeatureMap& batch) const;

  std::size_t channels() const { return in_vis.channels(); }
  bool use_mrm() const { return use_mrm_; }
  bool use_mcm() const { return use_mcm_; }

  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  std::size_t in_param_count() const;
  std::size_t mrm_param_count() const;
  std::size_t mcm_param_count() const;

  InstanceNorm in_vis, in_nir;
  ChannelAttention att_v1, att_n1;  // MRM gates
  ChannelAttention att_v2, att_n2;  // MCM gates

 private:
  bool use_mrm_ = true;
  bool use_mcm_ = true;
};

}  // namespace mrcn
