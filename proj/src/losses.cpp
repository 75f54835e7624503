#include "mrcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mrcn/check.hpp"

namespace mrcn {

void LossWeights::validate() const {
  MRCN_CHECK(alpha >= 0.0, "LossWeights: alpha must be >= 0");
  MRCN_CHECK(lambda1 >= 0.0 && lambda2 >= 0.0, "LossWeights: lambdas must be >= 0");
  MRCN_CHECK(smoothing >= 0.0 && smoothing < 1.0, "LossWeights: smoothing must be in [0, 1)");
  MRCN_CHECK(triplet_margin >= 0.0, "LossWeights: triplet margin must be >= 0");
}

CenterSlice class_centers(const Tensor& embeddings, const std::vector<int>& ids) {
  MRCN_CHECK(embeddings.rank() == 2, "class_centers: embeddings must be (N, d)");
  MRCN_CHECK(embeddings.dim(0) == ids.size(), "class_centers: ids length mismatch");
  MRCN_CHECK(!ids.empty(), "class_centers: empty identity group");
  MRCN_CHECK(embeddings.all_finite(), "class_centers: non-finite embeddings");

  CenterSlice out;
  out.ids.assign(ids.begin(), ids.end());
  std::sort(out.ids.begin(), out.ids.end());
  out.ids.erase(std::unique(out.ids.begin(), out.ids.end()), out.ids.end());

  const std::size_t c = out.ids.size(), d = embeddings.dim(1);
  out.centers = Tensor({c, d});
  std::vector<std::size_t> counts(c, 0);
  std::map<int, std::size_t> row;
  for (std::size_t i = 0; i < c; ++i) row[out.ids[i]] = i;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const std::size_t r = row.at(ids[n]);
    counts[r]++;
    for (std::size_t j = 0; j < d; ++j) out.centers.at2(r, j) += embeddings.at2(n, j);
  }
  for (std::size_t r = 0; r < c; ++r) {
    const double inv = 1.0 / static_cast<double>(counts[r]);
    for (std::size_t j = 0; j < d; ++j) out.centers.at2(r, j) *= inv;
  }
  return out;
}

void CenterTable::add_slice(Branch b, const CenterSlice& slice) {
  if (ids.empty()) {
    ids = slice.ids;
  } else {
    MRCN_CHECK(ids == slice.ids,
               "CenterTable: branch identity sets differ (empty identity group in some branch)");
  }
  centers[b] = slice.centers;
}

const Tensor& CenterTable::slice(Branch b) const {
  auto it = centers.find(b);
  MRCN_CHECK(it != centers.end(), std::string("CenterTable: missing branch ") + to_string(b));
  return it->second;
}

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  MRCN_CHECK(a.size() == b.size(), "euclidean_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

namespace {

double row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a.at2(i, k) - b.at2(j, k);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

Tensor& grad_slot(std::map<Branch, Tensor>& grads, Branch b, const Tensor& like) {
  auto it = grads.find(b);
  if (it == grads.end()) it = grads.emplace(b, Tensor(like.shape())).first;
  return it->second;
}

// One quadruplet hinge [alpha + D(a, b) - D(a, c)]_+ for identity row i of
// the given slices; accumulates center grads when grad slots are provided.
double hinge_term(const Tensor& sa, const Tensor& sb, const Tensor& sc, std::size_t i,
                  double alpha, Tensor* ga, Tensor* gb, Tensor* gc) {
  const std::size_t d = sa.dim(1);
  const double d_ab = row_distance(sa, i, sb, i);
  const double d_ac = row_distance(sa, i, sc, i);
  const double arg = alpha + d_ab - d_ac;
  if (arg <= 0.0) return 0.0;  // subgradient at exactly 0 taken as 0
  if (ga) {
    for (std::size_t k = 0; k < d; ++k) {
      const double u_ab = d_ab > 0.0 ? (sa.at2(i, k) - sb.at2(i, k)) / d_ab : 0.0;
      const double u_ac = d_ac > 0.0 ? (sa.at2(i, k) - sc.at2(i, k)) / d_ac : 0.0;
      (*ga).at2(i, k) += u_ab - u_ac;
      (*gb).at2(i, k) -= u_ab;
      (*gc).at2(i, k) += u_ac;
    }
  }
  return arg;
}

double cqc_part(const CenterTable& t, double alpha, Branch derived_v, Branch derived_n,
                std::map<Branch, Tensor>* grads) {
  MRCN_CHECK(alpha >= 0.0, "cqc: alpha must be >= 0");
  const Tensor& c_v = t.slice(Branch::kOrigV);
  const Tensor& c_n = t.slice(Branch::kOrigN);
  const Tensor& c_dv = t.slice(derived_v);
  const Tensor& c_dn = t.slice(derived_n);

  Tensor *g_v = nullptr, *g_n = nullptr, *g_dv = nullptr, *g_dn = nullptr;
  if (grads) {
    g_v = &grad_slot(*grads, Branch::kOrigV, c_v);
    g_n = &grad_slot(*grads, Branch::kOrigN, c_n);
    g_dv = &grad_slot(*grads, derived_v, c_dv);
    g_dn = &grad_slot(*grads, derived_n, c_dn);
  }

  double loss = 0.0;
  for (std::size_t i = 0; i < t.num_identities(); ++i) {
    // [alpha + D(c_{v*}, c_n) - D(c_{v*}, c_v)]_+
    loss += hinge_term(c_dv, c_n, c_v, i, alpha, g_dv, g_n, g_v);
    // [alpha + D(c_{n*}, c_v) - D(c_{n*}, c_n)]_+
    loss += hinge_term(c_dn, c_v, c_n, i, alpha, g_dn, g_v, g_n);
  }
  return loss;
}

}  // namespace

double cqc_mrm(const CenterTable& t, double alpha) {
  return cqc_part(t, alpha, Branch::kMrmV, Branch::kMrmN, nullptr);
}

double cqc_mcm(const CenterTable& t, double alpha) {
  return cqc_part(t, alpha, Branch::kMcmV, Branch::kMcmN, nullptr);
}

double cqc_total(const CenterTable& t, double alpha) { return cqc_mrm(t, alpha) + cqc_mcm(t, alpha); }

double cqc_mrm_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads) {
  return cqc_part(t, alpha, Branch::kMrmV, Branch::kMrmN, &grads);
}

double cqc_mcm_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads) {
  return cqc_part(t, alpha, Branch::kMcmV, Branch::kMcmN, &grads);
}

double cqc_total_grad(const CenterTable& t, double alpha, std::map<Branch, Tensor>& grads) {
  return cqc_mrm_grad(t, alpha, grads) + cqc_mcm_grad(t, alpha, grads);
}

double label_smoothed_ce(const Tensor& logits, const std::vector<int>& labels, double smoothing,
                         Tensor* grad_logits) {
  MRCN_CHECK(logits.rank() == 2, "label_smoothed_ce: logits must be (N, K)");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  MRCN_CHECK(labels.size() == n, "label_smoothed_ce: labels length mismatch");
  MRCN_CHECK(smoothing >= 0.0 && smoothing < 1.0, "label_smoothed_ce: smoothing must be in [0,1)");
  for (int lab : labels)
    MRCN_CHECK(lab >= 0 && static_cast<std::size_t>(lab) < k,
               "label_smoothed_ce: label out of range");

  if (grad_logits) *grad_logits = Tensor({n, k});
  const double uniform_q = smoothing / static_cast<double>(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* l = logits.data() + i * k;
    double mx = l[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, l[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(l[j] - mx);
    const double logsum = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) {
      const double q = uniform_q + (static_cast<std::size_t>(labels[i]) == j ? 1.0 - smoothing : 0.0);
      const double logp = l[j] - logsum;
      loss -= q * logp;
      if (grad_logits) grad_logits->at2(i, j) = (std::exp(logp) - q) * inv_n;
    }
  }
  return loss * inv_n;
}

double batch_hard_triplet(const Tensor& embeddings, const std::vector<int>& ids, double margin,
                          Tensor* grad) {
  MRCN_CHECK(embeddings.rank() == 2, "batch_hard_triplet: embeddings must be (N, d)");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  MRCN_CHECK(ids.size() == n, "batch_hard_triplet: ids length mismatch");
  MRCN_CHECK(margin >= 0.0, "batch_hard_triplet: margin must be >= 0");

  if (grad) *grad = Tensor({n, d});
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double max_pos = -1.0, min_neg = -1.0;
    std::size_t pos_idx = n, neg_idx = n;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == a) continue;
      const double dist = row_distance(embeddings, a, embeddings, o);
      if (ids[o] == ids[a]) {
        if (dist > max_pos) {
          max_pos = dist;
          pos_idx = o;
        }
      } else if (min_neg < 0.0 || dist < min_neg) {
        min_neg = dist;
        neg_idx = o;
      }
    }
    MRCN_CHECK(pos_idx < n, "batch_hard_triplet: anchor has no positive in the batch");
    MRCN_CHECK(neg_idx < n, "batch_hard_triplet: anchor has no negative in the batch");

    const double arg = margin + max_pos - min_neg;
    if (arg <= 0.0) continue;
    loss += arg;
    if (grad) {
      for (std::size_t k = 0; k < d; ++k) {
        const double u_p =
            max_pos > 0.0 ? (embeddings.at2(a, k) - embeddings.at2(pos_idx, k)) / max_pos : 0.0;
        const double u_nn =
            min_neg > 0.0 ? (embeddings.at2(a, k) - embeddings.at2(neg_idx, k)) / min_neg : 0.0;
        grad->at2(a, k) += (u_p - u_nn) * inv_n;
        grad->at2(pos_idx, k) -= u_p * inv_n;
        grad->at2(neg_idx, k) += u_nn * inv_n;
      }
    }
  }
  return loss * inv_n;
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  return parts.ce + weights.lambda1 * parts.triplet + weights.lambda2 * parts.cqc;
}

void scatter_center_grad(const std::vector<int>& table_ids, const Tensor& center_grad,
                         const std::vector<int>& emb_ids, Tensor& grad_emb) {
  MRCN_CHECK(center_grad.rank() == 2 && center_grad.dim(0) == table_ids.size(),
             "scatter_center_grad: center grad shape mismatch");
  const std::size_t d = center_grad.dim(1);
  MRCN_CHECK(grad_emb.rank() == 2 && grad_emb.dim(0) == emb_ids.size() && grad_emb.dim(1) == d,
             "scatter_center_grad: embedding grad shape mismatch");

  std::map<int, std::size_t> row;
  for (std::size_t i = 0; i < table_ids.size(); ++i) row[table_ids[i]] = i;
  std::map<int, std::size_t> counts;
  for (int id : emb_ids) counts[id]++;

  for (std::size_t nn = 0; nn < emb_ids.size(); ++nn) {
    auto it = row.find(emb_ids[nn]);
    MRCN_CHECK(it != row.end(), "scatter_center_grad: embedding identity missing from table");
    const double inv = 1.0 / static_cast<double>(counts.at(emb_ids[nn]));
    for (std::size_t k = 0; k < d; ++k)
      grad_emb.at2(nn, k) += center_grad.at2(it->second, k) * inv;
  }
}

}  // namespace mrcn
