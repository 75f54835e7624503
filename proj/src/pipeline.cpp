#include "mrcn/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrcn/check.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mrcn {

Dataset resolve_dataset(const RunConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    SyntheticSpec spec = cfg.synth;
    if (!cfg.synth_seed_set) spec.seed = cfg.seed;
    return generate_synthetic(spec);
  }
  if (fs::is_directory(cfg.dataset)) return load_directory(cfg.dataset);
  return load_dataset(cfg.dataset);
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out;
  out.full = resolve_dataset(cfg);

  std::vector<int> ids = out.full.paired_identities();
  MRCN_CONFIG_CHECK(ids.size() >= 2, "dataset needs at least 2 identities with both modalities");
  Rng split_rng(cfg.seed ^ 0x5eedULL);
  split_rng.shuffle(ids);
  std::size_t eval_count = static_cast<std::size_t>(cfg.holdout_fraction *
                                                    static_cast<double>(ids.size()));
  eval_count = std::clamp<std::size_t>(eval_count, 1, ids.size() - 1);

  std::set<int> eval_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(eval_count));
  std::set<int> train_ids(ids.begin() + static_cast<std::ptrdiff_t>(eval_count), ids.end());
  out.train_split = subset_by_identities(out.full, train_ids);
  out.eval_split = subset_by_identities(out.full, eval_ids);
  out.train_ids.assign(train_ids.begin(), train_ids.end());
  out.eval_ids.assign(eval_ids.begin(), eval_ids.end());

  MRCN_CONFIG_CHECK(out.train_ids.size() >= cfg.batch_p,
                    "train split has fewer identities than batch_p; lower batch_p or "
                    "holdout_fraction");
  return out;
}

namespace {

std::size_t dataset_in_channels(const RunConfig& cfg, const Dataset& dataset) {
  MRCN_CHECK(!dataset.samples.empty(), "empty dataset");
  const Sample& s = dataset.samples.front();
  if (s.image.rank() == 1) {
    std::size_t c, h, w;
    feature_map_layout(s.image.dim(0), &c, &h, &w);
    return c;
  }
  (void)cfg;
  return s.image.dim(0);
}

}  // namespace

NetworkConfig make_network_config(const RunConfig& cfg, const Dataset& dataset,
                                  std::size_t num_classes) {
  cfg.validate();
  NetworkConfig net_cfg;
  const std::size_t in_ch = dataset_in_channels(cfg, dataset);
  net_cfg.backbone =
      cfg.backbone == "toy" ? BackboneConfig::toy(in_ch) : BackboneConfig::resnet5(in_ch);
  net_cfg.placement.stage_index = cfg.stage;
  net_cfg.ablation.use_mrm = cfg.use_mrm;
  net_cfg.ablation.use_mcm = cfg.use_mcm;
  net_cfg.ablation.use_cqc = cfg.use_cqc;
  net_cfg.num_classes = num_classes;
  return net_cfg;
}

TrainOptions make_train_options(const RunConfig& cfg, const Dataset& dataset) {
  TrainOptions opts;
  opts.batch_p = cfg.batch_p;
  opts.batch_k = cfg.batch_k;
  opts.momentum = cfg.momentum;
  opts.weight_decay = cfg.weight_decay;
  opts.grad_clip_norm = cfg.grad_clip_norm;
  opts.loss = cfg.loss;
  opts.loss_branch_mask = cfg.loss_branches;
  opts.iterations_per_epoch = cfg.iterations_per_epoch;
  opts.checkpoint_every = cfg.checkpoint_every;
  if (dataset.image_mode) opts.augment = cfg.augment_config();
  return opts;
}

PipelineRun run_training(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  PreparedData data = prepare_data(cfg);
  NetworkConfig net_cfg = make_network_config(cfg, data.full, data.train_ids.size());

  Network net(net_cfg);
  Rng init_rng(cfg.seed ^ 0x1717ULL);
  net.init(init_rng);

  TrainOptions opts = make_train_options(cfg, data.train_split);
  TrainResult result = train(net, data.train_split, cfg.schedule, opts, cfg.seed, out_dir);
  return PipelineRun{std::move(net), std::move(result), std::move(data)};
}

RetrievalSummary summarize(const RetrievalReport& report, std::size_t gallery_size) {
  RetrievalSummary s;
  s.protocol = report.protocol;
  s.rank1 = report.rank_k(1);
  s.rank10 = report.rank_k(10);
  s.rank20 = report.rank_k(20);
  s.map = report.map;
  s.num_queries = report.num_queries;
  s.gallery_size = gallery_size;
  s.excluded = report.excluded_queries.size();
  return s;
}

namespace {

EmbeddingSet filter_by_modality(const EmbeddingSet& set, Modality m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.modalities[i] == m) idx.push_back(i);
  EmbeddingSet out;
  out.branch = set.branch;
  out.vectors = Tensor({idx.size(), set.dim()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < set.dim(); ++j) out.vectors.at2(i, j) = set.vectors.at2(idx[i], j);
    out.identities.push_back(set.identities[idx[i]]);
    out.modalities.push_back(m);
  }
  return out;
}

}  // namespace

namespace {

EmbeddingSet first_per_identity(const EmbeddingSet& set) {
  std::set<int> seen;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (seen.insert(set.identities[i]).second) idx.push_back(i);
  }
  EmbeddingSet out;
  out.branch = set.branch;
  out.vectors = Tensor({idx.size(), set.dim()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < set.dim(); ++j) out.vectors.at2(i, j) = set.vectors.at2(idx[i], j);
    out.identities.push_back(set.identities[idx[i]]);
    out.modalities.push_back(set.modalities[idx[i]]);
  }
  return out;
}

}  // namespace

RetrievalSummary evaluate_retrieval(const Network& net, const Dataset& eval_split,
                                    const std::string& direction, bool l2_normalize,
                                    bool single_shot) {
  EmbeddingSet all = extract_embeddings(net, eval_split);
  EmbeddingSet vis = filter_by_modality(all, Modality::kVis);
  EmbeddingSet nir = filter_by_modality(all, Modality::kNir);
  RetrievalOptions opts;
  opts.l2_normalize = l2_normalize;
  const bool vis_query = direction == "vis2nir";
  const EmbeddingSet& query = vis_query ? vis : nir;
  EmbeddingSet gallery = vis_query ? nir : vis;
  if (single_shot) gallery = first_per_identity(gallery);
  return summarize(cmc_map(query, gallery, opts), gallery.size());
}

DiagnosticsSummary run_diagnostics(const Network& net, const Dataset& eval_split) {
  DiagnosticsSummary out;
  std::map<Branch, EmbeddingSet> branches = extract_branch_embeddings(net, eval_split);
  out.has_mrm = branches.count(Branch::kMrmV) != 0;
  out.has_mcm = branches.count(Branch::kMcmV) != 0;

  // Probes run on V/N pairs merged into one set per branch family.
  auto merged = [&](Branch bv, Branch bn) {
    const EmbeddingSet& sv = branches.at(bv);
    const EmbeddingSet& sn = branches.at(bn);
    EmbeddingSet m;
    m.branch = std::string(sv.branch) + "|" + sn.branch;
    m.vectors = Tensor({sv.size() + sn.size(), sv.dim()});
    for (std::size_t i = 0; i < sv.size(); ++i)
      for (std::size_t j = 0; j < sv.dim(); ++j) m.vectors.at2(i, j) = sv.vectors.at2(i, j);
    for (std::size_t i = 0; i < sn.size(); ++i)
      for (std::size_t j = 0; j < sn.dim(); ++j)
        m.vectors.at2(sv.size() + i, j) = sn.vectors.at2(i, j);
    m.identities = sv.identities;
    m.identities.insert(m.identities.end(), sn.identities.begin(), sn.identities.end());
    m.modalities = sv.modalities;
    m.modalities.insert(m.modalities.end(), sn.modalities.begin(), sn.modalities.end());
    return m;
  };

  out.probe_orig = modality_probe(merged(Branch::kOrigV, Branch::kOrigN));
  if (out.has_mrm) out.probe_mrm = modality_probe(merged(Branch::kMrmV, Branch::kMrmN));
  if (out.has_mcm) out.mcm_check = mcm_center_check(branches);

  EmbeddingSet concat = extract_embeddings(net, eval_split);
  out.histogram_gap = distance_histograms(concat).gap;
  return out;
}

int cmd_synth_data(const RunConfig& cfg, const std::string& layout_dir) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  SyntheticSpec spec = cfg.synth;
  if (!cfg.synth_seed_set) spec.seed = cfg.seed;
  Dataset dataset = generate_synthetic(spec);
  const std::string path = cfg.out_dir + "/dataset.bin";
  save_dataset(dataset, path);
  std::vector<std::string> outputs = {path};
  if (!layout_dir.empty()) {
    MRCN_CONFIG_CHECK(dataset.image_mode,
                      "--layout-dir requires synth.image_mode=true (directory layout holds images)");
    export_directory(dataset, layout_dir);
    outputs.push_back(layout_dir);
  }
  write_manifest(cfg, "synth-data", outputs);
  std::cout << "wrote " << path << " (" << dataset.size() << " samples, "
            << dataset.identities().size() << " identities)\n";
  return 0;
}

namespace {

json summary_to_json(const RetrievalSummary& s) {
  return {{"protocol", s.protocol}, {"rank1", s.rank1},   {"rank10", s.rank10},
          {"rank20", s.rank20},     {"map", s.map},       {"num_queries", s.num_queries},
          {"gallery", s.gallery_size}, {"excluded", s.excluded}};
}

void print_summary(std::ostream& os, const RetrievalSummary& s) {
  os << s.protocol << "  R-1 " << s.rank1 << "  R-10 " << s.rank10 << "  R-20 " << s.rank20
     << "  mAP " << s.map << "  (" << s.num_queries << " queries, " << s.gallery_size
     << " gallery";
  if (s.excluded > 0) os << ", " << s.excluded << " excluded";
  os << ")\n";
}

std::vector<std::string> directions_of(const RunConfig& cfg) {
  if (cfg.eval_direction == "both") return {"vis2nir", "nir2vis"};
  return {cfg.eval_direction};
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
  PipelineRun run = run_training(cfg, cfg.out_dir);
  std::vector<std::string> outputs = {cfg.out_dir + "/metrics.jsonl", run.train_result.final_checkpoint};
  write_manifest(cfg, "train", outputs);
  if (!run.train_result.epochs.empty()) {
    const EpochRecord& last = run.train_result.epochs.back();
    std::cout << "trained " << cfg.schedule.total_epochs << " epochs; final loss " << last.total
              << " (ce " << last.ce << ", tri " << last.triplet << ", cqc " << last.cqc << ")\n";
  }
  std::cout << "final checkpoint: " << run.train_result.final_checkpoint << "\n";
  for (const std::string& dir : directions_of(cfg)) {
    RetrievalSummary s = evaluate_retrieval(run.net, run.data.eval_split, dir,
                                            cfg.eval_l2_normalize, cfg.eval_single_shot);
    print_summary(std::cout, s);
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  MRCN_CONFIG_CHECK(!checkpoint_path.empty(), "eval requires --checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Network net = restore_network(ckpt);

  PreparedData data = prepare_data(cfg);
  fs::create_directories(cfg.out_dir);

  json records = json::array();
  std::ostringstream text;
  for (const std::string& dir : directions_of(cfg)) {
    RetrievalSummary s = evaluate_retrieval(net, data.eval_split, dir, cfg.eval_l2_normalize,
                                            cfg.eval_single_shot);
    records.push_back(summary_to_json(s));
    print_summary(text, s);
  }

  EmbeddingSet emb = extract_embeddings(net, data.eval_split);
  const std::string emb_path = cfg.out_dir + "/embeddings.bin";
  export_embeddings(emb, emb_path);

  std::ofstream report_json(cfg.out_dir + "/report.json");
  report_json << records.dump(2) << "\n";
  std::ofstream report_txt(cfg.out_dir + "/report.txt");
  report_txt << text.str();
  std::cout << text.str();
  write_manifest(cfg, "eval", {cfg.out_dir + "/report.json", cfg.out_dir + "/report.txt", emb_path});
  return 0;
}

namespace {

struct AblationRow {
  std::string name;
  bool mrm, mcm, cqc;
};

}  // namespace

int cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const std::vector<AblationRow> rows = {
      {"baseline", false, false, false},
      {"MRCN (w/o CQC)", true, true, false},
      {"MCM (w CQC)", false, true, true},
      {"MRM (w CQC)", true, false, true},
      {"MRCN", true, true, true},
  };

  json records = json::array();
  std::ostringstream table;
  table << "model\tparams\trank1\tmAP\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AblationRow& row = rows[i];
    RunConfig run_cfg = cfg;
    run_cfg.use_mrm = row.mrm;
    run_cfg.use_mcm = row.mcm;
    run_cfg.use_cqc = row.cqc;
    const std::string sub_dir = cfg.out_dir + "/ablate_" + std::to_string(i);
    PipelineRun run = run_training(run_cfg, sub_dir);
    RetrievalSummary s =
        evaluate_retrieval(run.net, run.data.eval_split, directions_of(cfg).front(),
                           cfg.eval_l2_normalize, cfg.eval_single_shot);
    const std::size_t params = run.net.param_count();
    json rec = summary_to_json(s);
    rec["model"] = row.name;
    rec["param_count"] = params;
    rec["module_sizes"] = run.net.module_param_sizes();
    records.push_back(rec);
    table << row.name << "\t" << params << "\t" << s.rank1 << "\t" << s.map << "\n";
  }

  std::ofstream jsonl(cfg.out_dir + "/ablation.jsonl");
  for (const auto& rec : records) jsonl << rec.dump() << "\n";
  std::ofstream txt(cfg.out_dir + "/ablation.tsv");
  txt << table.str();
  std::cout << table.str();
  write_manifest(cfg, "ablate", {cfg.out_dir + "/ablation.jsonl", cfg.out_dir + "/ablation.tsv"});
  return 0;
}

int cmd_sweep_lambda2(const RunConfig& cfg) {
  cfg.validate();
  MRCN_CONFIG_CHECK(!cfg.lambda2_values.empty(), "sweep-lambda2 requires at least one value");
  fs::create_directories(cfg.out_dir);

  json records = json::array();
  std::ostringstream table;
  table << "lambda2\trank1\tmAP\n";
  for (std::size_t i = 0; i < cfg.lambda2_values.size(); ++i) {
    RunConfig run_cfg = cfg;
    run_cfg.loss.lambda2 = cfg.lambda2_values[i];
    const std::string sub_dir = cfg.out_dir + "/sweep_" + std::to_string(i);
    PipelineRun run = run_training(run_cfg, sub_dir);
    RetrievalSummary s =
        evaluate_retrieval(run.net, run.data.eval_split, directions_of(cfg).front(),
                           cfg.eval_l2_normalize, cfg.eval_single_shot);
    json rec = summary_to_json(s);
    rec["lambda2"] = cfg.lambda2_values[i];
    records.push_back(rec);
    table << cfg.lambda2_values[i] << "\t" << s.rank1 << "\t" << s.map << "\n";
  }

  std::ofstream jsonl(cfg.out_dir + "/sweep.jsonl");
  for (const auto& rec : records) jsonl << rec.dump() << "\n";
  std::ofstream txt(cfg.out_dir + "/sweep.tsv");
  txt << table.str();
  std::cout << table.str();
  write_manifest(cfg, "sweep-lambda2", {cfg.out_dir + "/sweep.jsonl", cfg.out_dir + "/sweep.tsv"});
  return 0;
}

int cmd_diagnose(const RunConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  MRCN_CONFIG_CHECK(!checkpoint_path.empty(), "diagnose requires --checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Network net = restore_network(ckpt);
  PreparedData data = prepare_data(cfg);
  fs::create_directories(cfg.out_dir);

  DiagnosticsSummary diag = run_diagnostics(net, data.eval_split);
  EmbeddingSet concat = extract_embeddings(net, data.eval_split);
  DistanceHistograms hist = distance_histograms(concat);
  const std::string emb_path = cfg.out_dir + "/embeddings.bin";
  export_embeddings(concat, emb_path);

  json j{{"probe_orig", diag.probe_orig},
         {"probe_mrm", diag.probe_mrm},
         {"intra_mean", hist.intra_mean},
         {"inter_mean", hist.inter_mean},
         {"gap", hist.gap},
         {"intra_hist", hist.intra_counts},
         {"inter_hist", hist.inter_counts},
         {"bin_width", hist.bin_width},
         {"mcm_center_satisfied", diag.mcm_check.satisfied},
         {"mcm_center_total", diag.mcm_check.total}};
  std::ofstream out(cfg.out_dir + "/diagnostics.json");
  out << j.dump(2) << "\n";

  std::cout << "modality probe (orig) " << diag.probe_orig << "\n";
  if (diag.has_mrm) std::cout << "modality probe (MRM)  " << diag.probe_mrm << "\n";
  std::cout << "cross-modality distance gap (inter - intra) " << hist.gap << "\n";
  if (diag.has_mcm)
    std::cout << "MCM center constraint satisfied for " << diag.mcm_check.satisfied << "/"
              << diag.mcm_check.total << " identities\n";
  write_manifest(cfg, "diagnose", {cfg.out_dir + "/diagnostics.json", emb_path});
  return 0;
}

}  // namespace mrcn
