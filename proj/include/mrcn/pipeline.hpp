#pragma once

#include <string>
#include <vector>

#include "mrcn/config.hpp"
#include "mrcn/evaluation.hpp"
#include "mrcn/network.hpp"
#include "mrcn/training.hpp"

namespace mrcn {

// Dataset resolution plus a deterministic identity-level train/eval split.
struct PreparedData {
  Dataset full;
  Dataset train_split;
  Dataset eval_split;
  std::vector<int> train_ids;
  std::vector<int> eval_ids;
};

Dataset resolve_dataset(const RunConfig& cfg);
PreparedData prepare_data(const RunConfig& cfg);

NetworkConfig make_network_config(const RunConfig& cfg, const Dataset& dataset,
                                  std::size_t num_classes);
TrainOptions make_train_options(const RunConfig& cfg, const Dataset& dataset);

struct PipelineRun {
  Network net;
  TrainResult train_result;
  PreparedData data;
};

// Generate/load data, build + init the network, run the training loop under
// out_dir (metrics.jsonl + checkpoints).
PipelineRun run_training(const RunConfig& cfg, const std::string& out_dir);

struct RetrievalSummary {
  std::string protocol;
  double rank1 = 0.0, rank10 = 0.0, rank20 = 0.0, map = 0.0;
  std::size_t num_queries = 0, gallery_size = 0, excluded = 0;
};

RetrievalSummary summarize(const RetrievalReport& report, std::size_t gallery_size);

// Splits eval embeddings into query/gallery by modality per `direction`
// (vis2nir: VIS queries against NIR gallery) and runs cmc_map. Single-shot
// keeps one gallery record per identity (first in dataset order).
RetrievalSummary evaluate_retrieval(const Network& net, const Dataset& eval_split,
                                    const std::string& direction, bool l2_normalize,
                                    bool single_shot = false);

struct DiagnosticsSummary {
  double probe_orig = 0.0;      // modality probe accuracy, original branch
  double probe_mrm = -1.0;      // -1 when MRM branch absent
  double histogram_gap = 0.0;   // inter - intra mean cross-modality distance
  CompensationCheck mcm_check;  // empty when MCM absent
  bool has_mrm = false;
  bool has_mcm = false;
};

DiagnosticsSummary run_diagnostics(const Network& net, const Dataset& eval_split);

// CLI command bodies; each writes a manifest and artifacts under cfg.out_dir.
int cmd_synth_data(const RunConfig& cfg, const std::string& layout_dir);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path);
int cmd_ablate(const RunConfig& cfg);
int cmd_sweep_lambda2(const RunConfig& cfg);
int cmd_diagnose(const RunConfig& cfg, const std::string& checkpoint_path);

}  // namespace mrcn
