#include "mrcn/mrcn_block.hpp"

#include "mrcn/check.hpp"

namespace mrcn {

const char* to_string(Branch b) {
  switch (b) {
    case Branch::kOrigV: return "v";
    case Branch::kOrigN: return "n";
    case Branch::kMrmV: return "v+";
    case Branch::kMrmN: return "n+";
    case Branch::kMcmV: return "v-";
    case Branch::kMcmN: return "n-";
  }
  return "?";
}

Branch branch_from_string(const std::string& s) {
  for (Branch b : kAllBranches) {
    if (s == to_string(b)) return b;
  }
  throw ConfigError("unknown branch name: '" + s + "' (expected v, n, v+, n+, v-, n-)");
}

std::vector<Branch> MrcnBranches::active() const {
  std::vector<Branch> out = {Branch::kOrigV, Branch::kOrigN};
  if (has_restituted) {
    out.push_back(Branch::kMrmV);
    out.push_back(Branch::kMrmN);
  }
  if (has_compensated) {
    out.push_back(Branch::kMcmV);
    out.push_back(Branch::kMcmN);
  }
  return out;
}

const FeatureMap& MrcnBranches::map(Branch b) const {
  switch (b) {
    case Branch::kOrigV: return f_v;
    case Branch::kOrigN: return f_n;
    case Branch::kMrmV: return f_v_plus;
    case Branch::kMrmN: return f_n_plus;
    case Branch::kMcmV: return f_v_minus;
    case Branch::kMcmN: return f_n_minus;
  }
  throw ContractViolation("MrcnBranches::map: bad branch");
}

FeatureMap& MrcnBranches::map(Branch b) {
  return const_cast<FeatureMap&>(static_cast<const MrcnBranches*>(this)->map(b));
}

FeatureMap mrm_restitute(const FeatureMap& f_norm, const FeatureMap& m_plus) {
  MRCN_CHECK(f_norm.data.same_shape(m_plus.data), "mrm_restitute: shape mismatch");
  MRCN_CHECK(f_norm.modality == m_plus.modality,
             "mrm_restitute: restitution must stay within one modality");
  FeatureMap out;
  out.modality = f_norm.modality;
  out.data = f_norm.data + m_plus.data;
  return out;
}

FeatureMap mcm_compensate(const FeatureMap& f_norm, const FeatureMap& m_minus_other) {
  MRCN_CHECK(f_norm.data.same_shape(m_minus_other.data), "mcm_compensate: shape mismatch");
  MRCN_CHECK(f_norm.modality != m_minus_other.modality,
             "mcm_compensate: the residual must come from the opposite modality");
  FeatureMap out;
  out.modality = f_norm.modality;  // tag of the normalized base
  out.data = f_norm.data + m_minus_other.data;
  return out;
}

MrcnBlock::MrcnBlock(std::size_t channels, bool use_mrm, bool use_mcm, std::size_t reduction)
    : in_vis(channels),
      in_nir(channels),
      use_mrm_(use_mrm),
      use_mcm_(use_mcm) {
  MRCN_CHECK(use_mrm || use_mcm, "MrcnBlock: at least one of MRM/MCM must be enabled");
  if (use_mrm) {
    att_v1 = ChannelAttention(channels, reduction);
    att_n1 = ChannelAttention(channels, reduction);
  }
  if (use_mcm) {
    att_v2 = ChannelAttention(channels, reduction);
    att_n2 = ChannelAttention(channels, reduction);
  }
}

void MrcnBlock::init(Rng& rng) {
  if (use_mrm_) {
    att_v1.init(rng);
    att_n1.init(rng);
  }
  if (use_mcm_) {
    att_v2.init(rng);
    att_n2.init(rng);
  }
}

MrcnBranches MrcnBlock::forward_pair(const FeatureMap& batch_v, const FeatureMap& batch_n,
                                     MrcnBlockCache* cache) const {
  MRCN_CHECK(batch_v.modality == Modality::kVis && batch_n.modality == Modality::kNir,
             "MrcnBlock::forward_pair: batches must be (VIS, NIR) in that order");
  MRCN_CHECK(batch_v.data.same_shape(batch_n.data),
             "MrcnBlock::forward_pair: paired batches must share shape");
  MRCN_CHECK(batch_v.channels() == channels(), "MrcnBlock::forward_pair: channel mismatch");

  FeatureMap norm_v = instance_normalize(batch_v, in_vis.params());
  FeatureMap norm_n = instance_normalize(batch_n, in_nir.params());
  FeatureMap res_v = modality_residual(batch_v, norm_v);
  FeatureMap res_n = modality_residual(batch_n, norm_n);

  MrcnBranches out;
  out.f_v = batch_v;
  out.f_n = batch_n;
  if (use_mrm_) {
    FeatureMap m_v_plus = distill(res_v, att_v1.weights(res_v.data));
    FeatureMap m_n_plus = distill(res_n, att_n1.weights(res_n.data));
    out.f_v_plus = mrm_restitute(norm_v, m_v_plus);
    out.f_n_plus = mrm_restitute(norm_n, m_n_plus);
    out.has_restituted = true;
  }
  if (use_mcm_) {
    FeatureMap m_v_minus = distill(res_v, att_v2.weights(res_v.data));
    FeatureMap m_n_minus = distill(res_n, att_n2.weights(res_n.data));
    out.f_v_minus = mcm_compensate(norm_v, m_n_minus);
    out.f_n_minus = mcm_compensate(norm_n, m_v_minus);
    out.has_compensated = true;
  }
  if (cache) {
    cache->f_v = batch_v.data;
    cache->f_n = batch_n.data;
    cache->norm_v = norm_v.data;
    cache->norm_n = norm_n.data;
    cache->res_v = res_v.data;
    cache->res_n = res_n.data;
  }
  return out;
}

MrcnBlockGrads MrcnBlock::backward_pair(const MrcnBlockCache& cache,
                                        const std::map<Branch, Tensor>& grad_branches) {
  auto grad_of = [&](Branch b) -> const Tensor* {
    auto it = grad_branches.find(b);
    return it == grad_branches.end() ? nullptr : &it->second;
  };

  Tensor grad_norm_v = Tensor(cache.norm_v.shape());
  Tensor grad_norm_n = Tensor(cache.norm_n.shape());
  Tensor grad_res_v = Tensor(cache.res_v.shape());
  Tensor grad_res_n = Tensor(cache.res_n.shape());

  // F+ = norm + distill(res); F- = norm + distill(res_other).
  if (use_mrm_) {
    if (const Tensor* g = grad_of(Branch::kMrmV)) {
      grad_norm_v.add_(*g);
      grad_res_v.add_(att_v1.backward(cache.res_v, *g));
    }
    if (const Tensor* g = grad_of(Branch::kMrmN)) {
      grad_norm_n.add_(*g);
      grad_res_n.add_(att_n1.backward(cache.res_n, *g));
    }
  }
  if (use_mcm_) {
    if (const Tensor* g = grad_of(Branch::kMcmV)) {
      grad_norm_v.add_(*g);
      grad_res_n.add_(att_n2.backward(cache.res_n, *g));
    }
    if (const Tensor* g = grad_of(Branch::kMcmN)) {
      grad_norm_n.add_(*g);
      grad_res_v.add_(att_v2.backward(cache.res_v, *g));
    }
  }

  // res = f - norm.
  MrcnBlockGrads grads;
  grads.f_v = grad_res_v;
  grads.f_n = grad_res_n;
  grad_norm_v.axpy_(-1.0, grad_res_v);
  grad_norm_n.axpy_(-1.0, grad_res_n);

  grads.f_v.add_(in_vis.backward(cache.f_v, grad_norm_v));
  grads.f_n.add_(in_nir.backward(cache.f_n, grad_norm_n));

  // Original branches bypass the block.
  if (const Tensor* g = grad_of(Branch::kOrigV)) grads.f_v.add_(*g);
  if (const Tensor* g = grad_of(Branch::kOrigN)) grads.f_n.add_(*g);
  return grads;
}

FeatureMap MrcnBlock::forward_mrm_single(const FeatureMap& batch) const {
  MRCN_CHECK(use_mrm_, "MrcnBlock::forward_mrm_single: MRM is disabled");
  const InstanceNorm& in = (batch.modality == Modality::kVis) ? in_vis : in_nir;
  const ChannelAttention& att = (batch.modality == Modality::kVis) ? att_v1 : att_n1;
  FeatureMap norm = instance_normalize(batch, in.params());
  FeatureMap res = modality_residual(batch, norm);
  return mrm_restitute(norm, distill(res, att.weights(res.data)));
}

void MrcnBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  in_vis.visit_params(prefix + ".in_vis", fn);
  in_nir.visit_params(prefix + ".in_nir", fn);
  if (use_mrm_) {
    att_v1.visit_params(prefix + ".att_v1", fn);
    att_n1.visit_params(prefix + ".att_n1", fn);
  }
  if (use_mcm_) {
    att_v2.visit_params(prefix + ".att_v2", fn);
    att_n2.visit_params(prefix + ".att_n2", fn);
  }
}

std::size_t MrcnBlock::in_param_count() const {
  return in_vis.gamma.numel() + in_vis.beta.numel() + in_nir.gamma.numel() + in_nir.beta.numel();
}

std::size_t MrcnBlock::mrm_param_count() const {
  return use_mrm_ ? att_v1.param_count() + att_n1.param_count() : 0;
}

std::size_t MrcnBlock::mcm_param_count() const {
  return use_mcm_ ? att_v2.param_count() + att_n2.param_count() : 0;
}

}  // namespace mrcn
