#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrcn/branch.hpp"
#include "mrcn/layers.hpp"
#include "mrcn/mrcn_block.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

struct StageSpec {
  std::size_t channels = 0;
  std::size_t blocks = 1;
  std::size_t stride = 1;
};

// Stage 0 is the stem; stages 1..n are residual stages.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  bool stem_relu = true;
  // Parameter-free per-sample standardization at each residual stage output.
  // Keeps activations and hinge-loss geometry bounded without batch coupling.
  bool stage_norm = true;
  std::vector<StageSpec> stages;

  // Two-stage config for desk-scale runs. The stem is a linear 1x1 conv so
  // per-channel input statistics stay per-channel at the block insertion
  // point; the residual stage supplies the nonlinearity.
  static BackboneConfig toy(std::size_t in_channels);
  // Conventional 5-stage residual CNN.
  static BackboneConfig resnet5(std::size_t in_channels);

  std::size_t num_stages() const { return 1 + stages.size(); }
  std::size_t embedding_dim() const {
    return stages.empty() ? stem_channels : stages.back().channels;
  }
  std::size_t channels_after_stage(std::size_t s) const;
};

// Backbone depth after which the MRCN block is inserted.
struct StagePlacement {
  int stage_index = 1;
};

struct AblationConfig {
  bool use_mrm = true;
  bool use_mcm = true;
  bool use_cqc = true;
};

struct ResidualBlock {
  Conv2d conv1, conv2;
  Conv2d proj;  // 1x1 shortcut projection when shape changes
  bool has_proj = false;

  struct Cache {
    Tensor x, pre1, h1, pre_out;
  };

  ResidualBlock() = default;
  ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& grad_y);
  void visit_params(const std::string& prefix, const ParamVisitor& fn);
};

struct Stem {
  Conv2d conv;
  bool use_relu = true;

  struct Cache {
    Tensor x, pre;
  };

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& grad_y);
};

// Records the units executed by a forward_range call, in order.
struct BackboneCache {
  struct Unit {
    enum class Kind { kStem, kBlock, kStageNorm };
    Kind kind = Kind::kBlock;
    std::size_t stage = 0, block = 0;
    Stem::Cache stem;
    ResidualBlock::Cache blockc;
    Tensor norm_input;
  };
  std::vector<Unit> units;
};

class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);
  void init(Rng& rng);

  // Runs stages [from, to); stage 0 = stem.
  Tensor forward_range(const Tensor& x, std::size_t from, std::size_t to,
                       BackboneCache* cache = nullptr) const;
  // Reverse pass over whatever the cache recorded; accumulates param grads.
  Tensor backward_range(const BackboneCache& cache, const Tensor& grad_y);

  std::size_t num_stages() const { return 1 + stages_.size(); }
  void visit_params(const std::string& prefix, const ParamVisitor& fn);

 private:
  Stem stem_;
  std::vector<std::vector<ResidualBlock>> stages_;
  bool stage_norm_ = true;
};

struct NetworkConfig {
  BackboneConfig backbone;
  StagePlacement placement;
  AblationConfig ablation;
  std::size_t num_classes = 1;
  std::size_t attention_reduction = 16;

  bool block_enabled() const { return ablation.use_mrm || ablation.use_mcm; }
};

// Backbone head -> (optional MRCN block) -> shared backbone tail applied to
// every branch -> global average pooling -> per-branch embedding, plus the
// shared linear classifier used by the identity loss.
class Network {
 public:
  explicit Network(const NetworkConfig& cfg);
  void init(Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  std::size_t embedding_dim() const { return cfg_.backbone.embedding_dim(); }
  std::size_t inference_dim() const;
  bool has_block() const { return block_.has_value(); }
  MrcnBlock& block();

  struct PairCache {
    BackboneCache head_v, head_n;
    MrcnBlockCache block;
    std::map<Branch, BackboneCache> tails;
    std::map<Branch, std::vector<std::size_t>> tail_out_shapes;
    std::map<Branch, Tensor> pooled;  // pre-standardization embeddings
  };

  // Embeddings (N, d) per active branch for an identity-aligned VIS/NIR pair.
  std::map<Branch, Tensor> forward_pair_train(const FeatureMap& batch_v,
                                              const FeatureMap& batch_n, PairCache& cache) const;
  void backward_pair_train(PairCache& cache, const std::map<Branch, Tensor>& grad_embeddings);

  Tensor classify(const Tensor& embeddings) const { return classifier_.forward(embeddings); }
  Tensor classifier_backward(const Tensor& embeddings, const Tensor& grad_logits) {
    return classifier_.backward(embeddings, grad_logits);
  }

  // Inference features: concat(f_orig, f_mrm) when MRM is enabled, else
  // f_orig. The MCM path is never computed here.
  Tensor extract(const FeatureMap& batch) const;

  // Diagnostic forward producing all active branch embeddings for an aligned
  // pair, without caches.
  std::map<Branch, Tensor> branch_embeddings(const FeatureMap& batch_v,
                                             const FeatureMap& batch_n) const;

  void visit_params(const ParamVisitor& fn);
  void zero_grads();
  std::size_t param_count();
  // Declared per-module parameter sizes (backbone / classifier / block.in /
  // block.mrm / block.mcm).
  std::map<std::string, std::size_t> module_param_sizes();

 private:
  Tensor embed_map(const Tensor& map, Branch b, PairCache* cache) const;

  NetworkConfig cfg_;
  Backbone backbone_;
  std::optional<MrcnBlock> block_;
  Dense classifier_;
};

// Checkpoint archive: network config + all parameters keyed by module path,
// plus optimizer velocity, epoch and RNG state for resume.
struct Checkpoint {
  NetworkConfig config;
  std::size_t epoch = 0;
  std::map<std::string, std::vector<double>> params;
  std::map<std::string, std::vector<double>> velocity;
  std::string rng_state;
};

Checkpoint make_checkpoint(Network& net, std::size_t epoch,
                           const std::map<std::string, std::vector<double>>& velocity,
                           const std::string& rng_state);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Rebuilds the network from the checkpoint config and restores parameters.
Network restore_network(const Checkpoint& ckpt);

}  // namespace mrcn
