#pragma once

#include <map>
#include <vector>

#include "mrcn/branch.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

struct LossWeights {
  double alpha = 0.2;           // CQC margin
  double lambda1 = 1.0;         // triplet weight
  double lambda2 = 1.2;         // CQC weight
  double smoothing = 0.1;       // CE label smoothing
  double triplet_margin = 0.3;

  void validate() const;
};

// Per-identity mean embeddings for one branch. ids are sorted unique;
// centers is (ids.size(), dim).
struct CenterSlice {
  std::vector<int> ids;
  Tensor centers;
};

CenterSlice class_centers(const Tensor& embeddings, const std::vector<int>& ids);

// Minibatch centers across branches; all slices must cover the same identity
// set.
struct CenterTable {
  std::vector<int> ids;
  std::map<Branch, Tensor> centers;

  void add_slice(Branch b, const CenterSlice& slice);
  bool has(Branch b) const { return centers.count(b) != 0; }
  const Tensor& slice(Branch b) const;
  std::size_t num_identities() const { return ids.size(); }
};

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b);

// Hinge sums over minibatch identities (not averaged). The *_grad variants
// accumulate d(loss)/d(center) into `grads` (allocated on demand, keyed by
// branch) and return the loss.
double cqc_mrm(const CenterTable& t, double alpha);
double cqc_mcm(const CenterTable& t, double alpha);
double cqc_total(const CenterTable& t, double alpha);
double cqc_mrm_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads);
double cqc_mcm_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads);
double cqc_total_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads);

// Mean over samples of -sum_k q_k log softmax(logits)_k with
// q = (1 - smoothing) * onehot + smoothing / K.
double label_smoothed_ce(const Tensor& logits, const std::vector<int>& labels, double smoothing,
                         Tensor* grad_logits = nullptr);

// Batch-hard form: mean over anchors of [margin + max_pos - min_neg]_+.
double batch_hard_triplet(const Tensor& embeddings, const std::vector<int>& ids, double margin,
                          Tensor* grad = nullptr);

struct LossParts {
  double ce = 0.0;
  double triplet = 0.0;
  double cqc = 0.0;
};

double total_loss(const LossParts& parts, const LossWeights& weights);

// Chain-rule helper: spread a (C, d) center gradient back onto the (N, d)
// embeddings that were averaged into each center.
void scatter_center_grad(const std::vector<int>& table_ids, const Tensor& center_grad,
                         const std::vector<int>& emb_ids, Tensor& grad_emb);

}  // namespace mrcn
