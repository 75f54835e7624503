#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrcn/losses.hpp"
#include "oracles.hpp"

using namespace mrcn;

namespace {

Tensor row_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.at2(i, j) = rows[i][j];
  return t;
}

// Scalar centers, one per identity per branch.
CenterTable scalar_table(const std::vector<double>& v, const std::vector<double>& n,
                         Branch derived_v_branch, const std::vector<double>& dv,
                         Branch derived_n_branch, const std::vector<double>& dn) {
  CenterTable t;
  const std::size_t c = v.size();
  t.ids.resize(c);
  for (std::size_t i = 0; i < c; ++i) t.ids[i] = static_cast<int>(i);
  auto col = [](const std::vector<double>& vals) {
    Tensor out({vals.size(), 1});
    for (std::size_t i = 0; i < vals.size(); ++i) out.at2(i, 0) = vals[i];
    return out;
  };
  t.centers[Branch::kOrigV] = col(v);
  t.centers[Branch::kOrigN] = col(n);
  t.centers[derived_v_branch] = col(dv);
  t.centers[derived_n_branch] = col(dn);
  return t;
}

CenterTable random_table(std::size_t c, std::size_t dim, Rng& rng, double alpha,
                         double min_hinge_gap) {
  // Resample until every hinge argument is bounded away from zero.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    CenterTable t;
    t.ids.resize(c);
    for (std::size_t i = 0; i < c; ++i) t.ids[i] = static_cast<int>(i);
    for (Branch b : kAllBranches) {
      Tensor centers({c, dim});
      oracle::fill_gaussian(centers, rng);
      t.centers[b] = std::move(centers);
    }
    bool ok = true;
    auto row = [&](Branch b, std::size_t i) {
      std::vector<double> out(dim);
      for (std::size_t j = 0; j < dim; ++j) out[j] = t.slice(b).at2(i, j);
      return out;
    };
    for (std::size_t i = 0; i < c && ok; ++i) {
      auto check_hinge = [&](Branch a, Branch bb, Branch cc) {
        const double arg = alpha + oracle::vec_distance(row(a, i), row(bb, i)) -
                           oracle::vec_distance(row(a, i), row(cc, i));
        if (std::fabs(arg) < min_hinge_gap) ok = false;
      };
      check_hinge(Branch::kMrmV, Branch::kOrigN, Branch::kOrigV);
      check_hinge(Branch::kMrmN, Branch::kOrigV, Branch::kOrigN);
      check_hinge(Branch::kMcmV, Branch::kOrigN, Branch::kOrigV);
      check_hinge(Branch::kMcmN, Branch::kOrigV, Branch::kOrigN);
    }
    if (ok) return t;
  }
  FAIL("could not build a non-degenerate center table");
  return {};
}

}  // namespace

TEST_CASE("class centers: singleton, arithmetic mean, permutation invariance") {
  Tensor single = row_tensor({{1.0, 2.0, 3.0}});
  CenterSlice s1 = class_centers(single, {7});
  CHECK(s1.ids == std::vector<int>{7});
  for (std::size_t j = 0; j < 3; ++j) CHECK(s1.centers.at2(0, j) == single.at2(0, j));

  Tensor two = row_tensor({{1.0, 0.0}, {0.0, 1.0}});
  CenterSlice s2 = class_centers(two, {4, 4});
  CHECK(s2.centers.at2(0, 0) == doctest::Approx(0.5));
  CHECK(s2.centers.at2(0, 1) == doctest::Approx(0.5));

  Rng rng(41);
  Tensor emb({6, 4});
  oracle::fill_gaussian(emb, rng);
  std::vector<int> ids = {2, 0, 2, 1, 0, 1};
  CenterSlice a = class_centers(emb, ids);
  Tensor shuffled({6, 4});
  std::vector<int> shuffled_ids;
  const std::vector<std::size_t> perm = {5, 2, 0, 4, 1, 3};
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) shuffled.at2(i, j) = emb.at2(perm[i], j);
    shuffled_ids.push_back(ids[perm[i]]);
  }
  CenterSlice b = class_centers(shuffled, shuffled_ids);
  CHECK(a.ids == b.ids);
  CHECK(max_abs_diff(a.centers, b.centers) <= 1e-12);
}

TEST_CASE("euclidean distance basics") {
  CHECK(euclidean_distance({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(euclidean_distance({0.0, 0.0}, {3.0, 4.0}) == doctest::Approx(5.0));
  Rng rng(42);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> a(5), b(5);
    for (double& x : a) x = rng.gaussian();
    for (double& x : b) x = rng.gaussian();
    CHECK(euclidean_distance(a, b) == doctest::Approx(euclidean_distance(b, a)));
  }
  CHECK_THROWS_AS(euclidean_distance({1.0}, {1.0, 2.0}), ContractViolation);
}

TEST_CASE("restitution hinge: frozen scalar cases") {
  // Case 1: restituted centers sit by the other modality's original -> 0.
  CenterTable sat = scalar_table({0.0}, {1.0}, Branch::kMrmV, {0.9}, Branch::kMrmN, {0.1});
  CHECK(cqc_mrm(sat, 0.2) == doctest::Approx(0.0).epsilon(1e-12));

  // Case 2: c_v+ = 0.2 violates its hinge by 0.8; the n+ hinge stays slack.
  CenterTable one = scalar_table({0.0}, {1.0}, Branch::kMrmV, {0.2}, Branch::kMrmN, {0.1});
  CHECK(cqc_mrm(one, 0.2) == doctest::Approx(0.8).epsilon(1e-12));

  // Case 3: all four centers coincide -> every hinge is [alpha]+, 2*C*alpha.
  const std::size_t c = 3;
  CenterTable same = scalar_table(std::vector<double>(c, 0.4), std::vector<double>(c, 0.4),
                                  Branch::kMrmV, std::vector<double>(c, 0.4), Branch::kMrmN,
                                  std::vector<double>(c, 0.4));
  CHECK(cqc_mrm(same, 0.2) == doctest::Approx(2.0 * c * 0.2).epsilon(1e-12));
}

TEST_CASE("compensation hinge: frozen scalar cases") {
  CenterTable sat = scalar_table({0.0}, {1.0}, Branch::kMcmV, {0.9}, Branch::kMcmN, {0.1});
  CHECK(cqc_mcm(sat, 0.2) == doctest::Approx(0.0).epsilon(1e-12));

  // Compensated centers glued to their own modality at distance 1: each hinge
  // is [0.2 + 1 - 0]+ = 1.2, so 2.4 per identity.
  const std::size_t c = 2;
  CenterTable glued = scalar_table(std::vector<double>(c, 0.0), std::vector<double>(c, 1.0),
                                   Branch::kMcmV, std::vector<double>(c, 0.0), Branch::kMcmN,
                                   std::vector<double>(c, 1.0));
  CHECK(cqc_mcm(glued, 0.2) == doctest::Approx(2.4 * c).epsilon(1e-12));

  // Margin zero with exactly midway centers: hinge argument 0, loss 0.
  CenterTable mid = scalar_table({0.0}, {1.0}, Branch::kMcmV, {0.5}, Branch::kMcmN, {0.5});
  CHECK(cqc_mcm(mid, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("cqc_total sums the two parts and splits over identity subsets") {
  CenterTable both = scalar_table({0.0}, {1.0}, Branch::kMrmV, {0.2}, Branch::kMrmN, {0.1});
  both.centers[Branch::kMcmV] = both.slice(Branch::kMrmV);
  both.centers[Branch::kMcmN] = both.slice(Branch::kMrmN);
  CHECK(cqc_total(both, 0.2) == doctest::Approx(cqc_mrm(both, 0.2) + cqc_mcm(both, 0.2)));
  CHECK(cqc_total(both, 0.2) == doctest::Approx(1.6).epsilon(1e-12));

  // Additivity: a table over identities A+B equals the sum of the sub-tables.
  Rng rng(43);
  CenterTable full = random_table(6, 4, rng, 0.2, 1e-3);
  auto subset = [&](std::size_t lo, std::size_t hi) {
    CenterTable t;
    for (std::size_t i = lo; i < hi; ++i) t.ids.push_back(full.ids[i]);
    for (const auto& [b, centers] : full.centers) {
      Tensor sub({hi - lo, 4});
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t j = 0; j < 4; ++j) sub.at2(i - lo, j) = centers.at2(i, j);
      t.centers[b] = std::move(sub);
    }
    return t;
  };
  CHECK(cqc_total(full, 0.2) ==
        doctest::Approx(cqc_total(subset(0, 2), 0.2) + cqc_total(subset(2, 6), 0.2)));
}

TEST_CASE("cqc is nonnegative and zero only with slack hinges") {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    CenterTable t = random_table(3, 5, rng, 0.2, 1e-4);
    CHECK(cqc_total(t, 0.2) >= 0.0);
  }
  CenterTable slack = scalar_table({0.0}, {1.0}, Branch::kMrmV, {1.0}, Branch::kMrmN, {0.0});
  slack.centers[Branch::kMcmV] = slack.slice(Branch::kMrmV);
  slack.centers[Branch::kMcmN] = slack.slice(Branch::kMrmN);
  CHECK(cqc_total(slack, 0.2) == 0.0);
}

TEST_CASE("cqc depends on distances only: rigid rotation invariance") {
  Rng rng(45);
  CenterTable t = random_table(4, 8, rng, 0.2, 1e-3) ;
  const double before = cqc_total(t, 0.2);
  auto q = oracle::random_orthogonal(8, rng);
  CenterTable rotated = t;
  for (auto& [b, centers] : rotated.centers) {
    Tensor r({4, 8});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 8; ++k) acc += q[j][k] * centers.at2(i, k);
        r.at2(i, j) = acc;
      }
    centers = std::move(r);
  }
  CHECK(cqc_total(rotated, 0.2) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("identity relabeling leaves the losses unchanged") {
  Rng rng(46);
  Tensor emb({8, 4});
  oracle::fill_gaussian(emb, rng);
  std::vector<int> ids = {0, 0, 1, 1, 2, 2, 3, 3};
  std::vector<int> relabeled = {10, 10, 7, 7, 99, 99, 3, 3};
  CHECK(batch_hard_triplet(emb, ids, 0.3) ==
        doctest::Approx(batch_hard_triplet(emb, relabeled, 0.3)));

  CenterSlice a = class_centers(emb, ids);
  CenterSlice b = class_centers(emb, relabeled);
  // Same center multiset (possibly reordered by the new labels).
  double suma = 0.0, sumb = 0.0;
  for (std::size_t i = 0; i < a.centers.numel(); ++i) suma += a.centers[i];
  for (std::size_t i = 0; i < b.centers.numel(); ++i) sumb += b.centers[i];
  CHECK(suma == doctest::Approx(sumb));
}

TEST_CASE("cqc gradients match central finite differences") {
  Rng rng(47);
  for (int trial = 0; trial < 5; ++trial) {
    CenterTable t = random_table(4, 8, rng, 0.2, 1e-2);
    std::map<Branch, Tensor> grads;
    cqc_total_grad(t, 0.2, grads);
    for (Branch b : kAllBranches) {
      auto loss = [&]() { return cqc_total(t, 0.2); };
      INFO("branch ", to_string(b));
      CHECK(oracle::max_grad_err(loss, t.centers[b], grads.at(b), 1e-4) <= 1e-4);
    }
  }
}

TEST_CASE("missing branches are contract violations") {
  CenterTable t = scalar_table({0.0}, {1.0}, Branch::kMrmV, {0.9}, Branch::kMrmN, {0.1});
  CHECK_THROWS_AS(cqc_mcm(t, 0.2), ContractViolation);
  CenterTable partial;
  partial.ids = {0};
  partial.centers[Branch::kOrigV] = row_tensor({{0.0}});
  CHECK_THROWS_AS(cqc_mrm(partial, 0.2), ContractViolation);

  // Mismatched identity sets across branches.
  CenterTable table;
  table.add_slice(Branch::kOrigV, class_centers(row_tensor({{0.0}}), {0}));
  CHECK_THROWS_AS(table.add_slice(Branch::kOrigN, class_centers(row_tensor({{0.0}}), {1})),
                  ContractViolation);
}

TEST_CASE("label-smoothed cross entropy") {
  SUBCASE("uniform logits give log K for any smoothing") {
    Tensor logits = Tensor::constant({3, 5}, 0.7);
    for (double s : {0.0, 0.1, 0.5}) {
      CHECK(label_smoothed_ce(logits, {0, 3, 4}, s) == doctest::Approx(std::log(5.0)));
    }
  }
  SUBCASE("zero smoothing reduces to plain cross entropy") {
    Rng rng(48);
    Tensor logits({4, 6});
    oracle::fill_gaussian(logits, rng);
    std::vector<int> labels = {1, 0, 5, 2};
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < 6; ++j) denom += std::exp(logits.at2(i, j));
      expected -= std::log(std::exp(logits.at2(i, labels[i])) / denom);
    }
    expected /= 4.0;
    CHECK(label_smoothed_ce(logits, labels, 0.0) == doctest::Approx(expected));
  }
  SUBCASE("two-class hand case") {
    Tensor logits({1, 2});
    logits.at2(0, 0) = 2.0;
    logits.at2(0, 1) = 0.0;
    const double p0 = std::exp(2.0) / (std::exp(2.0) + 1.0);
    const double p1 = 1.0 / (std::exp(2.0) + 1.0);
    const double expected = -(0.95 * std::log(p0) + 0.05 * std::log(p1));
    CHECK(label_smoothed_ce(logits, {0}, 0.1) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("contracts and gradient") {
    Tensor logits({2, 3});
    CHECK_THROWS_AS(label_smoothed_ce(logits, {0, 3}, 0.1), ContractViolation);
    CHECK_THROWS_AS(label_smoothed_ce(logits, {0, -1}, 0.1), ContractViolation);
    CHECK_THROWS_AS(label_smoothed_ce(logits, {0, 0}, 1.0), ContractViolation);

    Rng rng(49);
    oracle::fill_gaussian(logits, rng);
    Tensor grad;
    label_smoothed_ce(logits, {2, 0}, 0.1, &grad);
    auto loss = [&]() { return label_smoothed_ce(logits, {2, 0}, 0.1); };
    CHECK(oracle::max_grad_err(loss, logits, grad, 1e-6) <= 1e-6);
  }
}

TEST_CASE("batch-hard triplet loss") {
  SUBCASE("well-separated clusters satisfy the margin") {
    Tensor emb = row_tensor({{0.0, 0.0}, {1.0, 0.0}, {100.0, 100.0}, {101.0, 100.0}});
    CHECK(batch_hard_triplet(emb, {0, 0, 1, 1}, 0.3) == 0.0);
  }
  SUBCASE("identical embeddings give exactly the margin") {
    Tensor emb = Tensor::constant({4, 3}, 1.5);
    CHECK(batch_hard_triplet(emb, {0, 0, 1, 1}, 0.3) == doctest::Approx(0.3));
  }
  SUBCASE("four-point case matches the exhaustive oracle") {
    Rng rng(50);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<std::vector<double>> pts(4, std::vector<double>(3));
      for (auto& p : pts)
        for (double& x : p) x = rng.gaussian();
      Tensor emb = row_tensor(pts);
      std::vector<int> ids = {0, 0, 1, 1};
      CHECK(batch_hard_triplet(emb, ids, 0.3) ==
            doctest::Approx(oracle::brute_force_batch_hard_triplet(pts, ids, 0.3)));
    }
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(51);
    Tensor emb({6, 4});
    oracle::fill_gaussian(emb, rng);
    std::vector<int> ids = {0, 0, 1, 1, 2, 2};
    Tensor grad;
    batch_hard_triplet(emb, ids, 0.3, &grad);
    auto loss = [&]() { return batch_hard_triplet(emb, ids, 0.3); };
    CHECK(oracle::max_grad_err(loss, emb, grad, 1e-6) <= 1e-5);
  }
  SUBCASE("anchors need a positive and a negative") {
    Tensor emb({2, 2});
    CHECK_THROWS_AS(batch_hard_triplet(emb, {0, 1}, 0.3), ContractViolation);   // no positive
    CHECK_THROWS_AS(batch_hard_triplet(emb, {0, 0}, 0.3), ContractViolation);   // no negative
  }
}

TEST_CASE("total objective composition") {
  LossWeights w;
  CHECK(w.alpha == doctest::Approx(0.2));
  CHECK(w.lambda1 == doctest::Approx(1.0));
  CHECK(w.lambda2 == doctest::Approx(1.2));
  CHECK(w.smoothing == doctest::Approx(0.1));
  CHECK(w.triplet_margin == doctest::Approx(0.3));

  CHECK(total_loss({0.0, 0.0, 0.0}, w) == 0.0);
  LossParts parts{1.5, 0.7, 0.4};
  CHECK(total_loss(parts, w) == doctest::Approx(1.5 + 1.0 * 0.7 + 1.2 * 0.4));

  LossWeights doubled = w;
  doubled.lambda2 = 2.4;
  CHECK(total_loss(parts, doubled) - total_loss(parts, w) == doctest::Approx(1.2 * 0.4));

  // Affine in each lambda with the parts fixed.
  LossWeights wa = w, wb = w;
  wa.lambda1 = 0.0;
  wb.lambda1 = 2.0;
  const double mid = total_loss(parts, w);
  CHECK(0.5 * (total_loss(parts, wa) + total_loss(parts, wb)) == doctest::Approx(mid));

  LossWeights bad = w;
  bad.alpha = -0.1;
  CHECK_THROWS_AS(total_loss(parts, bad), ContractViolation);
}

TEST_CASE("scatter spreads center gradients by group size") {
  Tensor emb = row_tensor({{0.0, 0.0}, {2.0, 2.0}, {5.0, 5.0}});
  std::vector<int> ids = {3, 3, 8};
  CenterSlice slice = class_centers(emb, ids);
  Tensor cgrad({2, 2});
  cgrad.at2(0, 0) = 1.0;  // identity 3
  cgrad.at2(1, 1) = 4.0;  // identity 8
  Tensor gemb({3, 2});
  scatter_center_grad(slice.ids, cgrad, ids, gemb);
  CHECK(gemb.at2(0, 0) == doctest::Approx(0.5));
  CHECK(gemb.at2(1, 0) == doctest::Approx(0.5));
  CHECK(gemb.at2(2, 1) == doctest::Approx(4.0));
}
