#include "mrcn/network.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mrcn/check.hpp"

namespace mrcn {

using json = nlohmann::json;

BackboneConfig BackboneConfig::toy(std::size_t in_channels) {
  BackboneConfig cfg;
  cfg.in_channels = in_channels;
  cfg.stem_channels = 16;
  cfg.stem_kernel = 1;
  cfg.stem_stride = 1;
  cfg.stem_relu = true;
  cfg.stages = {{8, 1, 1}};
  return cfg;
}

BackboneConfig BackboneConfig::resnet5(std::size_t in_channels) {
  BackboneConfig cfg;
  cfg.in_channels = in_channels;
  cfg.stem_channels = 64;
  cfg.stem_kernel = 7;
  cfg.stem_stride = 2;
  cfg.stem_relu = true;
  cfg.stages = {{64, 2, 1}, {128, 2, 2}, {256, 2, 2}, {512, 2, 2}};
  return cfg;
}

std::size_t BackboneConfig::channels_after_stage(std::size_t s) const {
  MRCN_CHECK(s < num_stages(), "channels_after_stage: stage index out of range");
  return s == 0 ? stem_channels : stages[s - 1].channels;
}

ResidualBlock::ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride)
    : conv1(in_ch, out_ch, 3, stride, 1),
      conv2(out_ch, out_ch, 3, 1, 1),
      has_proj(in_ch != out_ch || stride != 1) {
  if (has_proj) proj = Conv2d(in_ch, out_ch, 1, stride, 0);
}

void ResidualBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  // Start near identity: the residual path fades in as conv2 trains.
  conv2.weight.value.scale_(0.1);
  if (has_proj) proj.init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Cache* cache) const {
  Tensor pre1 = conv1.forward(x);
  Tensor h1 = relu(pre1);
  Tensor pre_out = conv2.forward(h1);
  pre_out.add_(has_proj ? proj.forward(x) : x);
  Tensor y = relu(pre_out);
  if (cache) {
    cache->x = x;
    cache->pre1 = std::move(pre1);
    cache->h1 = std::move(h1);
    cache->pre_out = std::move(pre_out);
  }
  return y;
}

Tensor ResidualBlock::backward(const Cache& cache, const Tensor& grad_y) {
  Tensor g_pre_out = relu_backward(cache.pre_out, grad_y);
  Tensor g_h1 = conv2.backward(cache.h1, g_pre_out);
  Tensor g_pre1 = relu_backward(cache.pre1, g_h1);
  Tensor grad_x = conv1.backward(cache.x, g_pre1);
  if (has_proj) {
    grad_x.add_(proj.backward(cache.x, g_pre_out));
  } else {
    grad_x.add_(g_pre_out);
  }
  return grad_x;
}

void ResidualBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  conv1.visit_params(prefix + ".conv1", fn);
  conv2.visit_params(prefix + ".conv2", fn);
  if (has_proj) proj.visit_params(prefix + ".proj", fn);
}

Tensor Stem::forward(const Tensor& x, Cache* cache) const {
  Tensor pre = conv.forward(x);
  Tensor y = use_relu ? relu(pre) : pre;
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
  }
  return y;
}

Tensor Stem::backward(const Cache& cache, const Tensor& grad_y) {
  Tensor g = use_relu ? relu_backward(cache.pre, grad_y) : grad_y;
  return conv.backward(cache.x, g);
}

Backbone::Backbone(const BackboneConfig& cfg) : stage_norm_(cfg.stage_norm) {
  stem_.conv = Conv2d(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride,
                      cfg.stem_kernel / 2);
  stem_.use_relu = cfg.stem_relu;
  std::size_t in_ch = cfg.stem_channels;
  for (const StageSpec& spec : cfg.stages) {
    std::vector<ResidualBlock> blocks;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      const std::size_t stride = (b == 0) ? spec.stride : 1;
      blocks.emplace_back(in_ch, spec.channels, stride);
      in_ch = spec.channels;
    }
    stages_.push_back(std::move(blocks));
  }
}

void Backbone::init(Rng& rng) {
  stem_.conv.init(rng);
  for (auto& stage : stages_)
    for (auto& block : stage) block.init(rng);
}

Tensor Backbone::forward_range(const Tensor& x, std::size_t from, std::size_t to,
                               BackboneCache* cache) const {
  MRCN_CHECK(from <= to && to <= num_stages(), "Backbone::forward_range: bad stage range");
  Tensor cur = x;
  for (std::size_t s = from; s < to; ++s) {
    if (s == 0) {
      if (cache) {
        BackboneCache::Unit u;
        u.kind = BackboneCache::Unit::Kind::kStem;
        cur = stem_.forward(cur, &u.stem);
        cache->units.push_back(std::move(u));
      } else {
        cur = stem_.forward(cur, nullptr);
      }
    } else {
      const auto& stage = stages_[s - 1];
      for (std::size_t b = 0; b < stage.size(); ++b) {
        if (cache) {
          BackboneCache::Unit u;
          u.kind = BackboneCache::Unit::Kind::kBlock;
          u.stage = s;
          u.block = b;
          cur = stage[b].forward(cur, &u.blockc);
          cache->units.push_back(std::move(u));
        } else {
          cur = stage[b].forward(cur, nullptr);
        }
      }
      if (stage_norm_) {
        if (cache) {
          BackboneCache::Unit u;
          u.kind = BackboneCache::Unit::Kind::kStageNorm;
          u.norm_input = cur;
          cache->units.push_back(std::move(u));
        }
        cur = sample_standardize(cur);
      }
    }
  }
  return cur;
}

Tensor Backbone::backward_range(const BackboneCache& cache, const Tensor& grad_y) {
  Tensor g = grad_y;
  for (auto it = cache.units.rbegin(); it != cache.units.rend(); ++it) {
    switch (it->kind) {
      case BackboneCache::Unit::Kind::kStem:
        g = stem_.backward(it->stem, g);
        break;
      case BackboneCache::Unit::Kind::kBlock:
        g = stages_[it->stage - 1][it->block].backward(it->blockc, g);
        break;
      case BackboneCache::Unit::Kind::kStageNorm:
        g = sample_standardize_backward(it->norm_input, g);
        break;
    }
  }
  return g;
}

void Backbone::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  stem_.conv.visit_params(prefix + ".stem.conv", fn);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].visit_params(prefix + ".stage" + std::to_string(s + 1) + ".block" +
                                     std::to_string(b),
                                 fn);
    }
  }
}

Network::Network(const NetworkConfig& cfg) : cfg_(cfg), backbone_(cfg.backbone) {
  MRCN_CONFIG_CHECK(cfg.placement.stage_index >= 0 &&
                        static_cast<std::size_t>(cfg.placement.stage_index) <
                            cfg.backbone.num_stages(),
                    "stage placement " + std::to_string(cfg.placement.stage_index) +
                        " is invalid for a backbone with " +
                        std::to_string(cfg.backbone.num_stages()) + " stages");
  MRCN_CONFIG_CHECK(cfg.num_classes >= 1, "num_classes must be >= 1");
  if (cfg.block_enabled()) {
    const std::size_t ch =
        cfg.backbone.channels_after_stage(static_cast<std::size_t>(cfg.placement.stage_index));
    block_.emplace(ch, cfg.ablation.use_mrm, cfg.ablation.use_mcm, cfg.attention_reduction);
  }
  classifier_ = Dense(cfg.backbone.embedding_dim(), cfg.num_classes);
}

void Network::init(Rng& rng) {
  backbone_.init(rng);
  if (block_) block_->init(rng);
  classifier_.init(rng);
}

MrcnBlock& Network::block() {
  MRCN_CHECK(block_.has_value(), "Network::block: block is disabled in this configuration");
  return *block_;
}

std::size_t Network::inference_dim() const {
  return cfg_.ablation.use_mrm ? 2 * embedding_dim() : embedding_dim();
}

Tensor Network::embed_map(const Tensor& map, Branch b, PairCache* cache) const {
  const std::size_t split = static_cast<std::size_t>(cfg_.placement.stage_index) + 1;
  BackboneCache* tail_cache = nullptr;
  if (cache) tail_cache = &cache->tails[b];
  Tensor tail_out = backbone_.forward_range(map, split, backbone_.num_stages(), tail_cache);
  if (cache) cache->tail_out_shapes[b] = tail_out.shape();
  Tensor pooled = global_avg_pool(tail_out);
  Tensor emb = rows_standardize(pooled);
  if (cache) cache->pooled[b] = std::move(pooled);
  return emb;
}

std::map<Branch, Tensor> Network::forward_pair_train(const FeatureMap& batch_v,
                                                     const FeatureMap& batch_n,
                                                     PairCache& cache) const {
  MRCN_CHECK(batch_v.modality == Modality::kVis && batch_n.modality == Modality::kNir,
             "forward_pair_train: expected a (VIS, NIR) batch pair");
  const std::size_t split = static_cast<std::size_t>(cfg_.placement.stage_index) + 1;
  FeatureMap head_v{backbone_.forward_range(batch_v.data, 0, split, &cache.head_v),
                    Modality::kVis};
  FeatureMap head_n{backbone_.forward_range(batch_n.data, 0, split, &cache.head_n),
                    Modality::kNir};

  std::map<Branch, Tensor> embeddings;
  if (block_) {
    MrcnBranches branches = block_->forward_pair(head_v, head_n, &cache.block);
    for (Branch b : branches.active()) {
      embeddings[b] = embed_map(branches.map(b).data, b, &cache);
    }
  } else {
    embeddings[Branch::kOrigV] = embed_map(head_v.data, Branch::kOrigV, &cache);
    embeddings[Branch::kOrigN] = embed_map(head_n.data, Branch::kOrigN, &cache);
  }
  return embeddings;
}

void Network::backward_pair_train(PairCache& cache, const std::map<Branch, Tensor>& grad_embeddings) {
  std::map<Branch, Tensor> grad_maps;
  for (const auto& [b, g_emb] : grad_embeddings) {
    auto shape_it = cache.tail_out_shapes.find(b);
    MRCN_CHECK(shape_it != cache.tail_out_shapes.end(),
               "backward_pair_train: gradient for a branch that was not run");
    Tensor g_pooled = rows_standardize_backward(cache.pooled.at(b), g_emb);
    Tensor g_tail = global_avg_pool_backward(shape_it->second, g_pooled);
    grad_maps[b] = backbone_.backward_range(cache.tails[b], g_tail);
  }

  Tensor grad_head_v, grad_head_n;
  if (block_) {
    MrcnBlockGrads g = block_->backward_pair(cache.block, grad_maps);
    grad_head_v = std::move(g.f_v);
    grad_head_n = std::move(g.f_n);
  } else {
    grad_head_v = grad_maps.at(Branch::kOrigV);
    grad_head_n = grad_maps.at(Branch::kOrigN);
  }
  backbone_.backward_range(cache.head_v, grad_head_v);
  backbone_.backward_range(cache.head_n, grad_head_n);
}

Tensor Network::extract(const FeatureMap& batch) const {
  validate_feature_map(batch, "Network::extract");
  const std::size_t split = static_cast<std::size_t>(cfg_.placement.stage_index) + 1;
  FeatureMap head{backbone_.forward_range(batch.data, 0, split, nullptr), batch.modality};
  Tensor f_orig = rows_standardize(global_avg_pool(
      backbone_.forward_range(head.data, split, backbone_.num_stages(), nullptr)));
  if (!cfg_.ablation.use_mrm) return f_orig;

  FeatureMap restituted = block_->forward_mrm_single(head);
  Tensor f_mrm = rows_standardize(global_avg_pool(
      backbone_.forward_range(restituted.data, split, backbone_.num_stages(), nullptr)));

  const std::size_t n = f_orig.dim(0), d = f_orig.dim(1);
  Tensor out({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.at2(i, j) = f_orig.at2(i, j);
      out.at2(i, d + j) = f_mrm.at2(i, j);
    }
  }
  return out;
}

std::map<Branch, Tensor> Network::branch_embeddings(const FeatureMap& batch_v,
                                                    const FeatureMap& batch_n) const {
  const std::size_t split = static_cast<std::size_t>(cfg_.placement.stage_index) + 1;
  FeatureMap head_v{backbone_.forward_range(batch_v.data, 0, split, nullptr), Modality::kVis};
  FeatureMap head_n{backbone_.forward_range(batch_n.data, 0, split, nullptr), Modality::kNir};

  std::map<Branch, Tensor> out;
  auto embed = [&](const Tensor& map) {
    return rows_standardize(
        global_avg_pool(backbone_.forward_range(map, split, backbone_.num_stages(), nullptr)));
  };
  if (block_) {
    MrcnBranches branches = block_->forward_pair(head_v, head_n, nullptr);
    for (Branch b : branches.active()) out[b] = embed(branches.map(b).data);
  } else {
    out[Branch::kOrigV] = embed(head_v.data);
    out[Branch::kOrigN] = embed(head_n.data);
  }
  return out;
}

void Network::visit_params(const ParamVisitor& fn) {
  backbone_.visit_params("backbone", fn);
  if (block_) block_->visit_params("block", fn);
  classifier_.visit_params("classifier", fn);
}

void Network::zero_grads() {
  visit_params([](const std::string&, Param& p) { p.zero_grad(); });
}

std::size_t Network::param_count() {
  std::size_t n = 0;
  visit_params([&](const std::string&, Param& p) { n += p.numel(); });
  return n;
}

std::map<std::string, std::size_t> Network::module_param_sizes() {
  std::map<std::string, std::size_t> sizes;
  sizes["backbone"] = 0;
  backbone_.visit_params("backbone",
                         [&](const std::string&, Param& p) { sizes["backbone"] += p.numel(); });
  sizes["classifier"] = classifier_.weight.numel() + classifier_.bias.numel();
  if (block_) {
    sizes["block.in"] = block_->in_param_count();
    if (block_->use_mrm()) sizes["block.mrm"] = block_->mrm_param_count();
    if (block_->use_mcm()) sizes["block.mcm"] = block_->mcm_param_count();
  }
  return sizes;
}

namespace {

json backbone_to_json(const BackboneConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages)
    stages.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"stride", s.stride}});
  return {{"in_channels", cfg.in_channels},
          {"stem_channels", cfg.stem_channels},
          {"stem_kernel", cfg.stem_kernel},
          {"stem_stride", cfg.stem_stride},
          {"stem_relu", cfg.stem_relu},
          {"stage_norm", cfg.stage_norm},
          {"stages", stages}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig cfg;
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.stem_channels = j.at("stem_channels").get<std::size_t>();
  cfg.stem_kernel = j.at("stem_kernel").get<std::size_t>();
  cfg.stem_stride = j.at("stem_stride").get<std::size_t>();
  cfg.stem_relu = j.at("stem_relu").get<bool>();
  cfg.stage_norm = j.at("stage_norm").get<bool>();
  for (const auto& s : j.at("stages")) {
    cfg.stages.push_back({s.at("channels").get<std::size_t>(), s.at("blocks").get<std::size_t>(),
                          s.at("stride").get<std::size_t>()});
  }
  return cfg;
}

json network_config_to_json(const NetworkConfig& cfg) {
  return {{"backbone", backbone_to_json(cfg.backbone)},
          {"stage_placement", cfg.placement.stage_index},
          {"use_mrm", cfg.ablation.use_mrm},
          {"use_mcm", cfg.ablation.use_mcm},
          {"use_cqc", cfg.ablation.use_cqc},
          {"num_classes", cfg.num_classes},
          {"attention_reduction", cfg.attention_reduction}};
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig cfg;
  cfg.backbone = backbone_from_json(j.at("backbone"));
  cfg.placement.stage_index = j.at("stage_placement").get<int>();
  cfg.ablation.use_mrm = j.at("use_mrm").get<bool>();
  cfg.ablation.use_mcm = j.at("use_mcm").get<bool>();
  cfg.ablation.use_cqc = j.at("use_cqc").get<bool>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.attention_reduction = j.at("attention_reduction").get<std::size_t>();
  return cfg;
}

}  // namespace

Checkpoint make_checkpoint(Network& net, std::size_t epoch,
                           const std::map<std::string, std::vector<double>>& velocity,
                           const std::string& rng_state) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  ckpt.epoch = epoch;
  ckpt.velocity = velocity;
  ckpt.rng_state = rng_state;
  net.visit_params([&](const std::string& path, Param& p) {
    ckpt.params[path] = p.value.storage();
  });
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json j;
  j["format"] = "mrcn-checkpoint";
  j["version"] = 1;
  j["config"] = network_config_to_json(ckpt.config);
  j["epoch"] = ckpt.epoch;
  j["params"] = ckpt.params;
  j["velocity"] = ckpt.velocity;
  j["rng_state"] = ckpt.rng_state;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump();
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != "mrcn-checkpoint")
    throw IoError("not an mrcn checkpoint: " + path);
  Checkpoint ckpt;
  ckpt.config = network_config_from_json(j.at("config"));
  ckpt.epoch = j.at("epoch").get<std::size_t>();
  ckpt.params = j.at("params").get<std::map<std::string, std::vector<double>>>();
  ckpt.velocity = j.at("velocity").get<std::map<std::string, std::vector<double>>>();
  ckpt.rng_state = j.at("rng_state").get<std::string>();
  return ckpt;
}

Network restore_network(const Checkpoint& ckpt) {
  Network net(ckpt.config);
  net.visit_params([&](const std::string& path, Param& p) {
    auto it = ckpt.params.find(path);
    if (it == ckpt.params.end()) throw IoError("checkpoint missing parameter: " + path);
    if (it->second.size() != p.value.numel())
      throw IoError("checkpoint parameter size mismatch at " + path);
    p.value.storage() = it->second;
  });
  return net;
}

}  // namespace mrcn
