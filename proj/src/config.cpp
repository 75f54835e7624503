#include "mrcn/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrcn/check.hpp"

using json = nlohmann::json;

namespace mrcn {

void RunConfig::validate() const {
  MRCN_CONFIG_CHECK(backbone == "toy" || backbone == "resnet5",
                    "backbone must be 'toy' or 'resnet5', got '" + backbone + "'");
  MRCN_CONFIG_CHECK(stage >= 0 && stage <= 4, "stage must be in {0..4}");
  MRCN_CONFIG_CHECK(holdout_fraction > 0.0 && holdout_fraction < 1.0,
                    "holdout_fraction must be in (0, 1)");
  MRCN_CONFIG_CHECK(eval_direction == "vis2nir" || eval_direction == "nir2vis" ||
                        eval_direction == "both",
                    "eval_direction must be vis2nir, nir2vis or both");
  MRCN_CONFIG_CHECK(batch_p >= 1 && batch_k >= 1, "batch_p and batch_k must be >= 1");
  MRCN_CONFIG_CHECK(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  loss.validate();
  schedule.validate();
}

AugmentConfig RunConfig::augment_config() const {
  AugmentConfig a;
  a.target_height = augment_height;
  a.target_width = augment_width;
  a.flip_prob = augment_flip_prob;
  a.erase_prob = augment_erase_prob;
  return a;
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") cfg.seed = parse_uint(value, key);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "backbone") cfg.backbone = value;
  else if (key == "stage") cfg.stage = static_cast<int>(parse_uint(value, key));
  else if (key == "use_mrm") cfg.use_mrm = parse_bool(value, key);
  else if (key == "use_mcm") cfg.use_mcm = parse_bool(value, key);
  else if (key == "use_cqc") cfg.use_cqc = parse_bool(value, key);
  else if (key == "alpha") cfg.loss.alpha = parse_double(value, key);
  else if (key == "lambda1") cfg.loss.lambda1 = parse_double(value, key);
  else if (key == "lambda2") cfg.loss.lambda2 = parse_double(value, key);
  else if (key == "smoothing") cfg.loss.smoothing = parse_double(value, key);
  else if (key == "triplet_margin") cfg.loss.triplet_margin = parse_double(value, key);
  else if (key == "loss_branches") {
    cfg.loss_branches.clear();
    for (const std::string& item : split_list(value))
      cfg.loss_branches.insert(branch_from_string(item));
  } else if (key == "batch_p") cfg.batch_p = parse_uint(value, key);
  else if (key == "batch_k") cfg.batch_k = parse_uint(value, key);
  else if (key == "momentum") cfg.momentum = parse_double(value, key);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(value, key);
  else if (key == "grad_clip") cfg.grad_clip_norm = parse_double(value, key);
  else if (key == "base_lr") cfg.schedule.base_lr = parse_double(value, key);
  else if (key == "peak_lr") cfg.schedule.peak_lr = parse_double(value, key);
  else if (key == "warmup_epochs") cfg.schedule.warmup_epochs = parse_uint(value, key);
  else if (key == "decay1_epoch") cfg.schedule.decay1_epoch = parse_uint(value, key);
  else if (key == "decay1_lr") cfg.schedule.decay1_lr = parse_double(value, key);
  else if (key == "decay2_epoch") cfg.schedule.decay2_epoch = parse_uint(value, key);
  else if (key == "decay2_lr") cfg.schedule.decay2_lr = parse_double(value, key);
  else if (key == "epochs") cfg.schedule.set_total_epochs(parse_uint(value, key));
  else if (key == "checkpoint_every") cfg.checkpoint_every = parse_uint(value, key);
  else if (key == "holdout_fraction") cfg.holdout_fraction = parse_double(value, key);
  else if (key == "iterations_per_epoch") cfg.iterations_per_epoch = parse_uint(value, key);
  else if (key == "eval_l2_normalize") cfg.eval_l2_normalize = parse_bool(value, key);
  else if (key == "eval_single_shot") cfg.eval_single_shot = parse_bool(value, key);
  else if (key == "eval_direction") cfg.eval_direction = value;
  else if (key == "lambda2_values") {
    cfg.lambda2_values.clear();
    for (const std::string& item : split_list(value))
      cfg.lambda2_values.push_back(parse_double(item, key));
  } else if (key == "synth.num_identities") cfg.synth.num_identities = parse_uint(value, key);
  else if (key == "synth.samples_per_identity")
    cfg.synth.samples_per_identity_per_modality = parse_uint(value, key);
  else if (key == "synth.id_signal_dim") cfg.synth.id_signal_dim = parse_uint(value, key);
  else if (key == "synth.modality_offset_scale")
    cfg.synth.modality_offset_scale = parse_double(value, key);
  else if (key == "synth.noise_scale") cfg.synth.noise_scale = parse_double(value, key);
  else if (key == "synth.seed") {
    cfg.synth.seed = parse_uint(value, key);
    cfg.synth_seed_set = true;
  } else if (key == "synth.image_mode") cfg.synth.image_mode = parse_bool(value, key);
  else if (key == "synth.image_height") cfg.synth.image_height = parse_uint(value, key);
  else if (key == "synth.image_width") cfg.synth.image_width = parse_uint(value, key);
  else if (key == "augment.height") cfg.augment_height = parse_uint(value, key);
  else if (key == "augment.width") cfg.augment_width = parse_uint(value, key);
  else if (key == "augment.flip_prob") cfg.augment_flip_prob = parse_double(value, key);
  else if (key == "augment.erase_prob") cfg.augment_erase_prob = parse_double(value, key);
  else throw ConfigError("unknown config key: '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    apply_config_line(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

std::string config_to_json(const RunConfig& cfg) {
  json branches = json::array();
  for (Branch b : cfg.loss_branches) branches.push_back(to_string(b));
  json j{{"seed", cfg.seed},
         {"out", cfg.out_dir},
         {"dataset", cfg.dataset},
         {"backbone", cfg.backbone},
         {"stage", cfg.stage},
         {"use_mrm", cfg.use_mrm},
         {"use_mcm", cfg.use_mcm},
         {"use_cqc", cfg.use_cqc},
         {"alpha", cfg.loss.alpha},
         {"lambda1", cfg.loss.lambda1},
         {"lambda2", cfg.loss.lambda2},
         {"smoothing", cfg.loss.smoothing},
         {"triplet_margin", cfg.loss.triplet_margin},
         {"loss_branches", branches},
         {"batch_p", cfg.batch_p},
         {"batch_k", cfg.batch_k},
         {"momentum", cfg.momentum},
         {"weight_decay", cfg.weight_decay},
         {"grad_clip", cfg.grad_clip_norm},
         {"schedule",
          {{"base_lr", cfg.schedule.base_lr},
           {"peak_lr", cfg.schedule.peak_lr},
           {"warmup_epochs", cfg.schedule.warmup_epochs},
           {"decay1_epoch", cfg.schedule.decay1_epoch},
           {"decay1_lr", cfg.schedule.decay1_lr},
           {"decay2_epoch", cfg.schedule.decay2_epoch},
           {"decay2_lr", cfg.schedule.decay2_lr},
           {"total_epochs", cfg.schedule.total_epochs}}},
         {"checkpoint_every", cfg.checkpoint_every},
         {"holdout_fraction", cfg.holdout_fraction},
         {"iterations_per_epoch", cfg.iterations_per_epoch},
         {"eval_l2_normalize", cfg.eval_l2_normalize},
         {"eval_single_shot", cfg.eval_single_shot},
         {"eval_direction", cfg.eval_direction},
         {"lambda2_values", cfg.lambda2_values},
         {"synth",
          {{"num_identities", cfg.synth.num_identities},
           {"samples_per_identity", cfg.synth.samples_per_identity_per_modality},
           {"id_signal_dim", cfg.synth.id_signal_dim},
           {"modality_offset_scale", cfg.synth.modality_offset_scale},
           {"noise_scale", cfg.synth.noise_scale},
           {"seed", cfg.synth.seed},
           {"image_mode", cfg.synth.image_mode},
           {"image_height", cfg.synth.image_height},
           {"image_width", cfg.synth.image_width}}},
         {"augment",
          {{"height", cfg.augment_height},
           {"width", cfg.augment_width},
           {"flip_prob", cfg.augment_flip_prob},
           {"erase_prob", cfg.augment_erase_prob}}}};
  return j.dump(2);
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& outputs) {
  std::filesystem::create_directories(cfg.out_dir);
  json j;
  j["command"] = command;
  j["config"] = json::parse(config_to_json(cfg));
  j["outputs"] = outputs;
  std::ofstream out(cfg.out_dir + "/manifest.json");
  if (!out) throw IoError("cannot write manifest under " + cfg.out_dir);
  out << j.dump(2) << "\n";
}

}  // namespace mrcn
