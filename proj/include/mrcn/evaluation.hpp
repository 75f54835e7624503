#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrcn/data.hpp"
#include "mrcn/network.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

struct EmbeddingSet {
  Tensor vectors;  // (N, d)
  std::vector<int> identities;
  std::vector<Modality> modalities;
  std::string branch;

  std::size_t size() const { return identities.size(); }
  std::size_t dim() const { return vectors.rank() == 2 ? vectors.dim(1) : 0; }
  void validate() const;
};

// Inference features for every sample (concat of original and MRM-restituted
// branch when MRM is enabled).
EmbeddingSet extract_embeddings(const Network& net, const Dataset& dataset);

// Per-branch embeddings for diagnostics. Samples are paired within each
// identity (k-th VIS with (k mod #NIR)-th NIR and vice versa), so branch sets
// share one record per pair.
std::map<Branch, EmbeddingSet> extract_branch_embeddings(const Network& net,
                                                         const Dataset& dataset);

struct RetrievalOptions {
  bool l2_normalize = false;
};

struct RetrievalReport {
  std::vector<double> cmc;  // cmc[k-1] = fraction of queries with a match in top-k
  double map = 0.0;
  std::vector<double> per_query_ap;          // included queries, in query order
  std::vector<std::size_t> excluded_queries;  // query indices with no gallery match
  std::string protocol;                       // "vis->nir" or "nir->vis"
  std::size_t num_queries = 0;

  double rank_k(std::size_t k) const;
};

// Ranks the gallery by ascending Euclidean distance per query; ties broken by
// gallery index.
RetrievalReport cmc_map(const EmbeddingSet& query, const EmbeddingSet& gallery,
                        const RetrievalOptions& opts = {});

struct DistanceHistograms {
  std::vector<std::size_t> intra_counts;
  std::vector<std::size_t> inter_counts;
  double bin_lo = 0.0;
  double bin_width = 0.0;
  double intra_mean = 0.0;
  double inter_mean = 0.0;
  double gap = 0.0;  // inter_mean - intra_mean
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

// Cross-modality pairwise distances split into same-identity and
// different-identity populations.
DistanceHistograms distance_histograms(const EmbeddingSet& set, std::size_t bins = 50);

struct ProbeOptions {
  double train_fraction = 0.7;
  std::size_t epochs = 300;
  double lr = 0.5;
  std::uint64_t seed = 17;
};

// Held-out accuracy of a logistic regression predicting modality.
double modality_probe(const EmbeddingSet& set, const ProbeOptions& opts = {});

// Fraction of samples whose nearest identity centroid is their own.
double nearest_centroid_identity_accuracy(const EmbeddingSet& set);

struct CompensationCheck {
  std::size_t satisfied = 0;  // identities with D(c_v-, c_n) < D(c_v-, c_v)
  std::size_t total = 0;
  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(satisfied) / static_cast<double>(total);
  }
};

CompensationCheck mcm_center_check(const std::map<Branch, EmbeddingSet>& branch_sets);

// Binary dump: magic, float width, dim, count, branch tag, then per-record
// identity (i64), modality (byte) and the vector.
void export_embeddings(const EmbeddingSet& set, const std::string& path, bool float32 = false);
EmbeddingSet import_embeddings(const std::string& path);

// Views feature-mode dataset vectors as an embedding set (raw-signal probes).
EmbeddingSet dataset_features_as_embeddings(const Dataset& dataset);

}  // namespace mrcn
