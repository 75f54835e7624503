#include "mrcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrcn/check.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mrcn {

void ScheduleConfig::validate() const {
  MRCN_CHECK(base_lr > 0 && peak_lr > 0 && decay1_lr > 0 && decay2_lr > 0,
             "ScheduleConfig: learning rates must be > 0");
  MRCN_CHECK(warmup_epochs > 0, "ScheduleConfig: warmup_epochs must be > 0");
  MRCN_CHECK(warmup_epochs <= decay1_epoch && decay1_epoch <= decay2_epoch &&
                 decay2_epoch <= total_epochs,
             "ScheduleConfig: requires warmup <= decay1 <= decay2 <= total");
}

void ScheduleConfig::set_total_epochs(std::size_t total) {
  MRCN_CONFIG_CHECK(total >= 1, "total_epochs must be >= 1");
  total_epochs = total;
  if (warmup_epochs > total) warmup_epochs = total;
  if (decay1_epoch > total) decay1_epoch = total;
  if (decay2_epoch > total) decay2_epoch = total;
  if (decay1_epoch < warmup_epochs) decay1_epoch = warmup_epochs;
  if (decay2_epoch < decay1_epoch) decay2_epoch = decay1_epoch;
}

double learning_rate(std::size_t epoch, const ScheduleConfig& cfg) {
  cfg.validate();
  MRCN_CHECK(epoch < cfg.total_epochs, "learning_rate: epoch out of range");
  if (epoch < cfg.warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * t;
  }
  if (epoch < cfg.decay1_epoch) return cfg.peak_lr;
  if (epoch < cfg.decay2_epoch) return cfg.decay1_lr;
  return cfg.decay2_lr;
}

void SgdOptimizer::step(Network& net, double lr) {
  net.visit_params([&](const std::string& path, Param& p) { step_param(path, p, lr); });
}

void SgdOptimizer::step_param(const std::string& key, Param& p, double lr) {
  auto it = velocity_.find(key);
  if (it == velocity_.end()) it = velocity_.emplace(key, Tensor(p.value.shape())).first;
  Tensor& v = it->second;
  for (std::size_t i = 0; i < p.value.numel(); ++i) {
    v[i] = momentum_ * v[i] + (p.grad[i] + weight_decay_ * p.value[i]);
    p.value[i] -= lr * v[i];
  }
}

std::map<std::string, std::vector<double>> SgdOptimizer::velocity_state() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [path, v] : velocity_) out[path] = v.storage();
  return out;
}

void SgdOptimizer::restore_velocity(const std::map<std::string, std::vector<double>>& state) {
  velocity_.clear();
  for (const auto& [path, values] : state) {
    Tensor t({values.size()});
    t.storage() = values;
    velocity_.emplace(path, std::move(t));
  }
}

Trainer::Trainer(Network& net, const TrainOptions& opts, const std::vector<int>& class_identities)
    : net_(net), opts_(opts), opt_(opts.momentum, opts.weight_decay) {
  opts_.loss.validate();
  MRCN_CHECK(!class_identities.empty(), "Trainer: empty identity set");
  std::vector<int> ids = class_identities;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  MRCN_CONFIG_CHECK(ids.size() == net.config().num_classes,
                    "Trainer: classifier size does not match the training identity count");
  for (std::size_t i = 0; i < ids.size(); ++i) label_of_[ids[i]] = static_cast<int>(i);
}

int Trainer::label_of(int identity) const {
  auto it = label_of_.find(identity);
  MRCN_CHECK(it != label_of_.end(), "Trainer: identity not in the training set");
  return it->second;
}

namespace {

std::string batch_stats(const ModalityBatch& b) {
  double lo = b.map.data[0], hi = b.map.data[0], sum = 0.0;
  for (std::size_t i = 0; i < b.map.data.numel(); ++i) {
    lo = std::min(lo, b.map.data[i]);
    hi = std::max(hi, b.map.data[i]);
    sum += b.map.data[i];
  }
  std::ostringstream os;
  os << to_string(b.map.modality) << " batch " << b.map.data.shape_str() << " min=" << lo
     << " max=" << hi << " mean=" << sum / static_cast<double>(b.map.data.numel());
  return os.str();
}

}  // namespace

StepBreakdown Trainer::train_step(const ModalityBatch& batch_v, const ModalityBatch& batch_n,
                                  double lr) {
  MRCN_CHECK(batch_v.map.modality == Modality::kVis && batch_n.map.modality == Modality::kNir,
             "train_step: expected a (VIS, NIR) batch pair");
  MRCN_CHECK(batch_v.ids == batch_n.ids,
             "train_step: batches must be identity-aligned position by position");

  net_.zero_grads();
  Network::PairCache cache;
  std::map<Branch, Tensor> embeddings = net_.forward_pair_train(batch_v.map, batch_n.map, cache);

  std::vector<Branch> loss_branches;
  for (const auto& [b, emb] : embeddings) {
    if (opts_.loss_branch_mask.empty() || opts_.loss_branch_mask.count(b))
      loss_branches.push_back(b);
  }
  MRCN_CHECK(!loss_branches.empty(), "train_step: loss branch mask excludes every active branch");

  std::vector<int> labels;
  labels.reserve(batch_v.ids.size());
  for (int id : batch_v.ids) labels.push_back(label_of(id));

  const double inv_b = 1.0 / static_cast<double>(loss_branches.size());
  std::map<Branch, Tensor> grad_embeddings;
  for (const auto& [b, emb] : embeddings) grad_embeddings[b] = Tensor(emb.shape());

  StepBreakdown out;
  for (Branch b : loss_branches) {
    const Tensor& emb = embeddings.at(b);
    Tensor logits = net_.classify(emb);
    Tensor grad_logits;
    out.ce += label_smoothed_ce(logits, labels, opts_.loss.smoothing, &grad_logits) * inv_b;
    grad_logits.scale_(inv_b);
    grad_embeddings.at(b).add_(net_.classifier_backward(emb, grad_logits));
  }

  // Triplet mining runs on the modality-mixed PK batch of each branch family,
  // matching the sampler's 4 VIS + 4 NIR per identity design. Over a family
  // pool with equal halves this equals the mean of the two per-branch values.
  const std::pair<Branch, Branch> families[] = {
      {Branch::kOrigV, Branch::kOrigN},
      {Branch::kMrmV, Branch::kMrmN},
      {Branch::kMcmV, Branch::kMcmN},
  };
  std::vector<std::pair<Branch, Branch>> active_families;
  for (const auto& fam : families) {
    if (!embeddings.count(fam.first)) continue;
    const bool masked = !opts_.loss_branch_mask.empty() &&
                        (!opts_.loss_branch_mask.count(fam.first) ||
                         !opts_.loss_branch_mask.count(fam.second));
    if (!masked) active_families.push_back(fam);
  }
  MRCN_CHECK(!active_families.empty(), "train_step: no branch family left for the triplet loss");
  const double inv_f = 1.0 / static_cast<double>(active_families.size());
  const std::size_t n = batch_v.ids.size();
  for (const auto& [bv_branch, bn_branch] : active_families) {
    const Tensor& ev = embeddings.at(bv_branch);
    const Tensor& en = embeddings.at(bn_branch);
    const std::size_t d = ev.dim(1);
    Tensor pool({2 * n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        pool.at2(i, j) = ev.at2(i, j);
        pool.at2(n + i, j) = en.at2(i, j);
      }
    }
    std::vector<int> pool_ids = batch_v.ids;
    pool_ids.insert(pool_ids.end(), batch_v.ids.begin(), batch_v.ids.end());
    Tensor grad_pool;
    out.triplet +=
        batch_hard_triplet(pool, pool_ids, opts_.loss.triplet_margin, &grad_pool) * inv_f;
    Tensor& gv = grad_embeddings.at(bv_branch);
    Tensor& gn = grad_embeddings.at(bn_branch);
    const double w = opts_.loss.lambda1 * inv_f;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        gv.at2(i, j) += w * grad_pool.at2(i, j);
        gn.at2(i, j) += w * grad_pool.at2(n + i, j);
      }
    }
  }

  const bool cqc_active = net_.config().ablation.use_cqc && net_.has_block();
  if (cqc_active) {
    CenterTable table;
    for (const auto& [b, emb] : embeddings) table.add_slice(b, class_centers(emb, batch_v.ids));
    std::map<Branch, Tensor> center_grads;
    if (table.has(Branch::kMrmV)) out.cqc += cqc_mrm_grad(table, opts_.loss.alpha, center_grads);
    if (table.has(Branch::kMcmV)) out.cqc += cqc_mcm_grad(table, opts_.loss.alpha, center_grads);
    for (const auto& [b, g] : center_grads) {
      Tensor weighted = g;
      weighted.scale_(opts_.loss.lambda2);
      scatter_center_grad(table.ids, weighted, batch_v.ids, grad_embeddings.at(b));
    }
  }

  out.total = out.ce + opts_.loss.lambda1 * out.triplet + opts_.loss.lambda2 * out.cqc;
  if (!std::isfinite(out.total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss (ce=" << out.ce << " triplet=" << out.triplet
       << " cqc=" << out.cqc << "); " << batch_stats(batch_v) << "; " << batch_stats(batch_n);
    throw TrainingError(os.str());
  }

  net_.backward_pair_train(cache, grad_embeddings);

  if (opts_.grad_clip_norm > 0.0) {
    double norm_sq = 0.0;
    net_.visit_params([&](const std::string&, Param& p) {
      for (std::size_t i = 0; i < p.grad.numel(); ++i) norm_sq += p.grad[i] * p.grad[i];
    });
    const double norm = std::sqrt(norm_sq);
    if (norm > opts_.grad_clip_norm) {
      const double scale = opts_.grad_clip_norm / norm;
      net_.visit_params([&](const std::string&, Param& p) { p.grad.scale_(scale); });
    }
  }

  opt_.step(net_, lr);
  return out;
}

namespace {

std::string checkpoint_path(const std::string& out_dir, std::size_t completed_epochs) {
  return out_dir + "/checkpoint_epoch_" + std::to_string(completed_epochs) + ".json";
}

// Newest checkpoint under out_dir, if any.
std::optional<std::string> find_latest_checkpoint(const std::string& out_dir) {
  if (!fs::is_directory(out_dir)) return std::nullopt;
  std::optional<std::string> best;
  std::size_t best_epoch = 0;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("checkpoint_epoch_", 0) != 0 || entry.path().extension() != ".json") continue;
    std::size_t epoch = 0;
    try {
      epoch = std::stoul(name.substr(17));
    } catch (const std::exception&) {
      continue;
    }
    if (!best || epoch > best_epoch) {
      best = entry.path().string();
      best_epoch = epoch;
    }
  }
  return best;
}

}  // namespace

TrainResult train(Network& net, const Dataset& train_set, const ScheduleConfig& schedule,
                  const TrainOptions& opts, std::uint64_t seed, const std::string& out_dir) {
  schedule.validate();
  MRCN_CHECK(!train_set.samples.empty(), "train: empty dataset");
  fs::create_directories(out_dir);

  Rng rng(seed);
  Trainer trainer(net, opts, train_set.paired_identities());
  SgdOptimizer& opt = trainer.optimizer();

  TrainResult result;
  std::size_t start_epoch = 0;
  if (auto latest = find_latest_checkpoint(out_dir)) {
    Checkpoint ckpt = load_checkpoint(*latest);
    net.visit_params([&](const std::string& path, Param& p) {
      auto it = ckpt.params.find(path);
      if (it == ckpt.params.end()) throw IoError("resume checkpoint missing parameter " + path);
      if (it->second.size() != p.value.numel())
        throw IoError("resume checkpoint size mismatch at " + path);
      p.value.storage() = it->second;
    });
    opt.restore_velocity(ckpt.velocity);
    rng = Rng::deserialize(ckpt.rng_state);
    start_epoch = ckpt.epoch;
    result.resumed = true;
    result.final_checkpoint = *latest;
  }

  const std::size_t batch_samples = 2 * opts.batch_p * opts.batch_k;
  std::size_t iterations = opts.iterations_per_epoch;
  if (iterations == 0) iterations = std::max<std::size_t>(1, train_set.size() / batch_samples);

  std::ofstream metrics(out_dir + "/metrics.jsonl",
                        start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot open metrics log under " + out_dir);

  std::size_t last_saved = start_epoch;
  for (std::size_t epoch = start_epoch; epoch < schedule.total_epochs; ++epoch) {
    const double lr = learning_rate(epoch, schedule);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t it = 0; it < iterations; ++it) {
      PkBatch batch = pk_sample(train_set, opts.batch_p, opts.batch_k, rng);
      const AugmentConfig* aug = opts.augment ? &*opts.augment : nullptr;
      ModalityBatch bv = assemble_batch(train_set, batch.vis_indices, Modality::kVis, aug, &rng);
      ModalityBatch bn = assemble_batch(train_set, batch.nir_indices, Modality::kNir, aug, &rng);
      StepBreakdown step = trainer.train_step(bv, bn, lr);
      rec.ce += step.ce;
      rec.triplet += step.triplet;
      rec.cqc += step.cqc;
      rec.total += step.total;
    }
    const double inv = 1.0 / static_cast<double>(iterations);
    rec.ce *= inv;
    rec.triplet *= inv;
    rec.cqc *= inv;
    rec.total *= inv;
    result.epochs.push_back(rec);

    metrics << json{{"epoch", rec.epoch},
                    {"lr", rec.lr},
                    {"loss_ce", rec.ce},
                    {"loss_tri", rec.triplet},
                    {"loss_cqc", rec.cqc},
                    {"loss_total", rec.total}}
                   .dump()
            << "\n";
    metrics.flush();

    const std::size_t completed = epoch + 1;
    if (completed % opts.checkpoint_every == 0 || completed == schedule.total_epochs) {
      Checkpoint ckpt =
          make_checkpoint(net, completed, opt.velocity_state(), rng.serialize());
      result.final_checkpoint = checkpoint_path(out_dir, completed);
      save_checkpoint(ckpt, result.final_checkpoint);
      last_saved = completed;
    }
  }
  (void)last_saved;
  return result;
}

}  // namespace mrcn
