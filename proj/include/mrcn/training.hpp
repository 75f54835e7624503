#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mrcn/data.hpp"
#include "mrcn/losses.hpp"
#include "mrcn/network.hpp"

namespace mrcn {

// Warmup to peak_lr, then two step decays.
struct ScheduleConfig {
  double base_lr = 1e-2;
  double peak_lr = 1e-1;
  std::size_t warmup_epochs = 10;
  std::size_t decay1_epoch = 20;
  double decay1_lr = 1e-2;
  std::size_t decay2_epoch = 60;
  double decay2_lr = 1e-3;
  std::size_t total_epochs = 80;

  void validate() const;
  // Keeps the ordering invariant satisfiable when total_epochs is overridden
  // below the decay epochs (clamped decays are simply never reached).
  void set_total_epochs(std::size_t total);
};

double learning_rate(std::size_t epoch, const ScheduleConfig& cfg);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.9, double weight_decay = 5e-4)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  // v <- momentum * v + (grad + wd * theta); theta <- theta - lr * v
  void step(Network& net, double lr);
  void step_param(const std::string& key, Param& p, double lr);

  std::map<std::string, std::vector<double>> velocity_state() const;
  void restore_velocity(const std::map<std::string, std::vector<double>>& state);
  double momentum() const { return momentum_; }

 private:
  std::map<std::string, Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

struct TrainOptions {
  std::size_t batch_p = 4;
  std::size_t batch_k = 4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Global gradient-norm clip applied before the momentum update; 0 disables.
  // The hinge-sum losses carry scale-free unit subgradients, and without a
  // clip they run away under the warmup schedule on unnormalized backbones.
  double grad_clip_norm = 0.5;
  LossWeights loss;
  // Branches receiving the identity losses; empty = every active branch.
  std::set<Branch> loss_branch_mask;
  std::size_t iterations_per_epoch = 0;  // 0 = derive from dataset size
  std::size_t checkpoint_every = 10;
  std::optional<AugmentConfig> augment;  // image-mode training only
};

struct StepBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double triplet = 0.0;
  double cqc = 0.0;
};

// One forward/backward/update over an identity-aligned modality pair.
class Trainer {
 public:
  Trainer(Network& net, const TrainOptions& opts, const std::vector<int>& class_identities);

  StepBreakdown train_step(const ModalityBatch& batch_v, const ModalityBatch& batch_n, double lr);

  SgdOptimizer& optimizer() { return opt_; }
  int label_of(int identity) const;

 private:
  Network& net_;
  TrainOptions opts_;
  SgdOptimizer opt_;
  std::map<int, int> label_of_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  double triplet = 0.0;
  double cqc = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;  // this run only (excludes pre-resume epochs)
  std::string final_checkpoint;
  bool resumed = false;
};

// Full loop: PK batches, schedule, periodic checkpoints, metrics log. Resumes
// from the newest checkpoint under out_dir when one exists.
TrainResult train(Network& net, const Dataset& train_set, const ScheduleConfig& schedule,
                  const TrainOptions& opts, std::uint64_t seed, const std::string& out_dir);

}  // namespace mrcn
