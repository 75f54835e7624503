#pragma once

#include <set>
#include <string>
#include <vector>

#include "mrcn/branch.hpp"
#include "mrcn/data.hpp"
#include "mrcn/losses.hpp"
#include "mrcn/training.hpp"

namespace mrcn {

// Resolved run configuration. Precedence: built-in defaults < config file <
// command-line flags. Defaults follow the published operating point
// (alpha=0.2, lambda1=1, lambda2=1.2, P=4, K=4, momentum=0.9).
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string dataset = "synthetic";  // "synthetic", container file, or image directory

  std::string backbone = "toy";  // toy | resnet5
  int stage = 1;
  bool use_mrm = true;
  bool use_mcm = true;
  bool use_cqc = true;

  LossWeights loss;
  std::set<Branch> loss_branches;  // empty = all active branches

  std::size_t batch_p = 4;
  std::size_t batch_k = 4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip_norm = 0.5;  // 0 disables
  ScheduleConfig schedule;
  std::size_t checkpoint_every = 10;
  double holdout_fraction = 0.5;
  std::size_t iterations_per_epoch = 0;

  bool eval_l2_normalize = false;
  bool eval_single_shot = false;  // one gallery image per identity
  std::string eval_direction = "vis2nir";  // vis2nir | nir2vis | both

  SyntheticSpec synth;
  bool synth_seed_set = false;  // when false, synth.seed follows `seed`

  std::size_t augment_height = 288;
  std::size_t augment_width = 128;
  double augment_flip_prob = 0.5;
  double augment_erase_prob = 0.5;

  std::vector<double> lambda2_values = {0.4, 0.8, 1.2, 1.6};

  void validate() const;
  AugmentConfig augment_config() const;
};

// Applies `key = value` assignments from a flat config file. Unknown keys are
// rejected with a ConfigError naming the key.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);

// JSON view of every resolved field (manifest payload).
std::string config_to_json(const RunConfig& cfg);

// Writes `<out_dir>/manifest.json` with the command name and resolved config.
void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& outputs);

}  // namespace mrcn
