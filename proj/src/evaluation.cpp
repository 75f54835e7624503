#include "mrcn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mrcn/check.hpp"
#include "mrcn/losses.hpp"

namespace mrcn {

void EmbeddingSet::validate() const {
  MRCN_CHECK(vectors.rank() == 2, "EmbeddingSet: vectors must be (N, d)");
  MRCN_CHECK(vectors.dim(0) == identities.size() && identities.size() == modalities.size(),
             "EmbeddingSet: parallel lists must have equal length");
  MRCN_CHECK(vectors.all_finite(), "EmbeddingSet: non-finite vectors");
}

namespace {

constexpr std::size_t kExtractChunk = 32;

void append_rows(Tensor& dst, std::size_t row, const Tensor& src) {
  const std::size_t d = src.dim(1);
  for (std::size_t i = 0; i < src.dim(0); ++i)
    for (std::size_t j = 0; j < d; ++j) dst.at2(row + i, j) = src.at2(i, j);
}

}  // namespace

EmbeddingSet extract_embeddings(const Network& net, const Dataset& dataset) {
  MRCN_CHECK(!dataset.samples.empty(), "extract_embeddings: empty dataset");
  const std::size_t n = dataset.size();
  EmbeddingSet out;
  out.branch = net.config().ablation.use_mrm ? "concat" : "orig";
  out.vectors = Tensor({n, net.inference_dim()});
  out.identities.resize(n);
  out.modalities.resize(n);

  // Group by modality, extract in chunks, scatter back in dataset order.
  for (Modality m : {Modality::kVis, Modality::kNir}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (dataset.samples[i].modality == m) idx.push_back(i);
    }
    for (std::size_t start = 0; start < idx.size(); start += kExtractChunk) {
      const std::size_t stop = std::min(idx.size(), start + kExtractChunk);
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                     idx.begin() + static_cast<std::ptrdiff_t>(stop));
      ModalityBatch batch = assemble_batch(dataset, chunk, m);
      Tensor emb = net.extract(batch.map);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        for (std::size_t j = 0; j < emb.dim(1); ++j)
          out.vectors.at2(chunk[i], j) = emb.at2(i, j);
        out.identities[chunk[i]] = dataset.samples[chunk[i]].identity;
        out.modalities[chunk[i]] = m;
      }
    }
  }
  return out;
}

std::map<Branch, EmbeddingSet> extract_branch_embeddings(const Network& net,
                                                         const Dataset& dataset) {
  std::vector<std::size_t> pair_v, pair_n;
  std::vector<int> pair_ids;
  for (int id : dataset.paired_identities()) {
    const auto vis = dataset.indices_of(id, Modality::kVis);
    const auto nir = dataset.indices_of(id, Modality::kNir);
    const std::size_t pairs = std::max(vis.size(), nir.size());
    for (std::size_t k = 0; k < pairs; ++k) {
      pair_v.push_back(vis[k % vis.size()]);
      pair_n.push_back(nir[k % nir.size()]);
      pair_ids.push_back(id);
    }
  }
  MRCN_CHECK(!pair_ids.empty(), "extract_branch_embeddings: no identity appears in both modalities");

  std::map<Branch, EmbeddingSet> out;
  for (std::size_t start = 0; start < pair_ids.size(); start += kExtractChunk) {
    const std::size_t stop = std::min(pair_ids.size(), start + kExtractChunk);
    std::vector<std::size_t> cv(pair_v.begin() + static_cast<std::ptrdiff_t>(start),
                                pair_v.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<std::size_t> cn(pair_n.begin() + static_cast<std::ptrdiff_t>(start),
                                pair_n.begin() + static_cast<std::ptrdiff_t>(stop));
    ModalityBatch bv = assemble_batch(dataset, cv, Modality::kVis);
    ModalityBatch bn = assemble_batch(dataset, cn, Modality::kNir);
    std::map<Branch, Tensor> embs = net.branch_embeddings(bv.map, bn.map);

    for (const auto& [b, emb] : embs) {
      if (!out.count(b)) {
        EmbeddingSet set;
        set.branch = to_string(b);
        set.vectors = Tensor({pair_ids.size(), emb.dim(1)});
        out.emplace(b, std::move(set));
      }
      append_rows(out.at(b).vectors, start, emb);
    }
  }

  for (auto& [b, set] : out) {
    set.identities = pair_ids;
    const bool vis_side = (b == Branch::kOrigV || b == Branch::kMrmV || b == Branch::kMcmV);
    set.modalities.assign(pair_ids.size(), vis_side ? Modality::kVis : Modality::kNir);
  }
  return out;
}

double RetrievalReport::rank_k(std::size_t k) const {
  MRCN_CHECK(k >= 1, "rank_k: k must be >= 1");
  if (cmc.empty()) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

namespace {

Tensor maybe_l2_normalize(const Tensor& vectors, bool enabled) {
  if (!enabled) return vectors;
  Tensor out = vectors;
  const std::size_t n = out.dim(0), d = out.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += out.at2(i, j) * out.at2(i, j);
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (std::size_t j = 0; j < d; ++j) out.at2(i, j) /= norm;
    }
  }
  return out;
}

Modality single_modality(const EmbeddingSet& set, const char* what) {
  MRCN_CHECK(set.size() > 0, std::string(what) + " set is empty");
  const Modality m = set.modalities.front();
  for (Modality x : set.modalities)
    MRCN_CHECK(x == m, std::string(what) + " set mixes modalities");
  return m;
}

}  // namespace

RetrievalReport cmc_map(const EmbeddingSet& query, const EmbeddingSet& gallery,
                        const RetrievalOptions& opts) {
  query.validate();
  gallery.validate();
  MRCN_CHECK(query.dim() == gallery.dim(), "cmc_map: embedding dims differ");
  const Modality qm = single_modality(query, "query");
  const Modality gm = single_modality(gallery, "gallery");
  MRCN_CHECK(qm != gm, "cmc_map: query and gallery modalities must be opposite");

  const Tensor qv = maybe_l2_normalize(query.vectors, opts.l2_normalize);
  const Tensor gv = maybe_l2_normalize(gallery.vectors, opts.l2_normalize);
  const std::size_t nq = query.size(), ng = gallery.size(), d = qv.dim(1);

  RetrievalReport report;
  report.protocol = std::string(to_string(qm)) + "->" + to_string(gm);
  report.cmc.assign(ng, 0.0);

  std::vector<std::size_t> first_match_ranks;
  for (std::size_t q = 0; q < nq; ++q) {
    bool has_match = false;
    for (std::size_t g = 0; g < ng; ++g) {
      if (gallery.identities[g] == query.identities[q]) {
        has_match = true;
        break;
      }
    }
    if (!has_match) {
      report.excluded_queries.push_back(q);
      continue;
    }

    std::vector<double> dist(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = qv.at2(q, j) - gv.at2(g, j);
        acc += diff * diff;
      }
      dist[g] = std::sqrt(acc);
    }
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist[a] != dist[b]) return dist[a] < dist[b];
      return a < b;
    });

    std::size_t hits = 0;
    double ap = 0.0;
    std::size_t first_rank = 0;
    for (std::size_t r = 0; r < ng; ++r) {
      if (gallery.identities[order[r]] == query.identities[q]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        if (hits == 1) first_rank = r;
      }
    }
    ap /= static_cast<double>(hits);
    report.per_query_ap.push_back(ap);
    first_match_ranks.push_back(first_rank);
  }

  report.num_queries = report.per_query_ap.size();
  MRCN_CHECK(report.num_queries > 0, "cmc_map: no query identity appears in the gallery");
  for (std::size_t rank : first_match_ranks) {
    for (std::size_t k = rank; k < ng; ++k) report.cmc[k] += 1.0;
  }
  const double inv_q = 1.0 / static_cast<double>(report.num_queries);
  for (double& v : report.cmc) v *= inv_q;
  report.map = std::accumulate(report.per_query_ap.begin(), report.per_query_ap.end(), 0.0) * inv_q;
  return report;
}

DistanceHistograms distance_histograms(const EmbeddingSet& set, std::size_t bins) {
  set.validate();
  MRCN_CHECK(bins >= 1, "distance_histograms: bins must be >= 1");
  std::vector<int> ids = set.identities;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  MRCN_CHECK(ids.size() >= 2,
             "distance_histograms: needs >= 2 identities (inter-class undefined otherwise)");

  const std::size_t n = set.size(), d = set.dim();
  std::vector<double> intra, inter;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (set.modalities[i] == set.modalities[j]) continue;  // cross-modality pairs only
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = set.vectors.at2(i, k) - set.vectors.at2(j, k);
        acc += diff * diff;
      }
      const double dist = std::sqrt(acc);
      (set.identities[i] == set.identities[j] ? intra : inter).push_back(dist);
    }
  }
  MRCN_CHECK(!intra.empty(), "distance_histograms: no cross-modality same-identity pairs");
  MRCN_CHECK(!inter.empty(), "distance_histograms: no cross-modality different-identity pairs");

  DistanceHistograms out;
  out.intra_pairs = intra.size();
  out.inter_pairs = inter.size();
  out.intra_mean = std::accumulate(intra.begin(), intra.end(), 0.0) / intra.size();
  out.inter_mean = std::accumulate(inter.begin(), inter.end(), 0.0) / inter.size();
  out.gap = out.inter_mean - out.intra_mean;

  double max_dist = 0.0;
  for (double v : intra) max_dist = std::max(max_dist, v);
  for (double v : inter) max_dist = std::max(max_dist, v);
  out.bin_lo = 0.0;
  out.bin_width = max_dist > 0.0 ? max_dist / static_cast<double>(bins) : 1.0;
  out.intra_counts.assign(bins, 0);
  out.inter_counts.assign(bins, 0);
  auto bin_of = [&](double v) {
    const auto b = static_cast<std::size_t>(v / out.bin_width);
    return std::min(b, bins - 1);
  };
  for (double v : intra) out.intra_counts[bin_of(v)]++;
  for (double v : inter) out.inter_counts[bin_of(v)]++;
  return out;
}

double modality_probe(const EmbeddingSet& set, const ProbeOptions& opts) {
  set.validate();
  MRCN_CHECK(opts.train_fraction > 0.0 && opts.train_fraction < 1.0,
             "modality_probe: train_fraction must be in (0, 1)");
  std::vector<std::size_t> vis, nir;
  for (std::size_t i = 0; i < set.size(); ++i)
    (set.modalities[i] == Modality::kVis ? vis : nir).push_back(i);
  MRCN_CHECK(!vis.empty() && !nir.empty(), "modality_probe: both modalities must be present");

  Rng rng(opts.seed);
  std::vector<std::size_t> train, test;
  for (auto* group : {&vis, &nir}) {
    rng.shuffle(*group);
    const std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(opts.train_fraction *
                                                          static_cast<double>(group->size())));
    for (std::size_t i = 0; i < group->size(); ++i)
      (i < n_train ? train : test).push_back((*group)[i]);
  }
  MRCN_CHECK(!test.empty(), "modality_probe: too few samples for a held-out split");

  const std::size_t d = set.dim();
  // Standardize on train statistics.
  std::vector<double> mean(d, 0.0), stddev(d, 0.0);
  for (std::size_t i : train)
    for (std::size_t j = 0; j < d; ++j) mean[j] += set.vectors.at2(i, j);
  for (double& v : mean) v /= static_cast<double>(train.size());
  for (std::size_t i : train)
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = set.vectors.at2(i, j) - mean[j];
      stddev[j] += diff * diff;
    }
  for (double& v : stddev) v = std::sqrt(v / static_cast<double>(train.size())) + 1e-8;

  auto feature = [&](std::size_t i, std::size_t j) {
    return (set.vectors.at2(i, j) - mean[j]) / stddev[j];
  };
  auto target = [&](std::size_t i) { return set.modalities[i] == Modality::kNir ? 1.0 : 0.0; };

  // Full-batch logistic regression from zero init.
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i : train) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * feature(i, j);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = (p - target(i)) * inv_n;
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * feature(i, j);
      gb += err;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= opts.lr * gw[j];
    b -= opts.lr * gb;
  }

  std::size_t correct = 0;
  for (std::size_t i : test) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * feature(i, j);
    const double pred = z >= 0.0 ? 1.0 : 0.0;
    if (pred == target(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double nearest_centroid_identity_accuracy(const EmbeddingSet& set) {
  set.validate();
  CenterSlice centers = class_centers(set.vectors, set.identities);
  const std::size_t n = set.size(), d = set.dim();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    int best_id = 0;
    for (std::size_t c = 0; c < centers.ids.size(); ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = set.vectors.at2(i, j) - centers.centers.at2(c, j);
        acc += diff * diff;
      }
      if (best < 0.0 || acc < best) {
        best = acc;
        best_id = centers.ids[c];
      }
    }
    if (best_id == set.identities[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

CompensationCheck mcm_center_check(const std::map<Branch, EmbeddingSet>& branch_sets) {
  MRCN_CHECK(branch_sets.count(Branch::kOrigV) && branch_sets.count(Branch::kOrigN) &&
                 branch_sets.count(Branch::kMcmV),
             "mcm_center_check: needs v, n and v- branch embeddings");
  const auto& sv = branch_sets.at(Branch::kOrigV);
  const auto& sn = branch_sets.at(Branch::kOrigN);
  const auto& svm = branch_sets.at(Branch::kMcmV);

  CenterSlice cv = class_centers(sv.vectors, sv.identities);
  CenterSlice cn = class_centers(sn.vectors, sn.identities);
  CenterSlice cvm = class_centers(svm.vectors, svm.identities);
  MRCN_CHECK(cv.ids == cn.ids && cv.ids == cvm.ids, "mcm_center_check: identity sets differ");

  CompensationCheck out;
  const std::size_t d = cv.centers.dim(1);
  for (std::size_t i = 0; i < cv.ids.size(); ++i) {
    double to_n = 0.0, to_v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dn = cvm.centers.at2(i, j) - cn.centers.at2(i, j);
      const double dv = cvm.centers.at2(i, j) - cv.centers.at2(i, j);
      to_n += dn * dn;
      to_v += dv * dv;
    }
    out.total++;
    if (to_n < to_v) out.satisfied++;
  }
  return out;
}

namespace {
constexpr char kEmbeddingMagic[8] = {'M', 'R', 'C', 'N', 'E', 'M', 'B', '1'};
}

void export_embeddings(const EmbeddingSet& set, const std::string& path, bool float32) {
  set.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open embedding dump for writing: " + path);
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  const std::uint8_t width = float32 ? 4 : 8;
  const std::uint32_t dim = static_cast<std::uint32_t>(set.dim());
  const std::uint64_t count = set.size();
  const std::uint16_t tag_len = static_cast<std::uint16_t>(set.branch.size());
  out.write(reinterpret_cast<const char*>(&width), sizeof(width));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&tag_len), sizeof(tag_len));
  out.write(set.branch.data(), tag_len);

  for (std::size_t i = 0; i < count; ++i) {
    const std::int64_t id = set.identities[i];
    const std::uint8_t mod = set.modalities[i] == Modality::kVis ? 0 : 1;
    out.write(reinterpret_cast<const char*>(&id), sizeof(id));
    out.write(reinterpret_cast<const char*>(&mod), sizeof(mod));
    if (float32) {
      for (std::size_t j = 0; j < dim; ++j) {
        const float v = static_cast<float>(set.vectors.at2(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    } else {
      out.write(reinterpret_cast<const char*>(set.vectors.data() + i * dim),
                static_cast<std::streamsize>(dim * sizeof(double)));
    }
  }
  if (!out) throw IoError("failed writing embedding dump: " + path);
}

EmbeddingSet import_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding dump: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0)
    throw IoError("not an mrcn embedding dump: " + path);

  std::uint8_t width = 0;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::uint16_t tag_len = 0;
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  in.read(reinterpret_cast<char*>(&tag_len), sizeof(tag_len));
  if (!in || (width != 4 && width != 8) || dim == 0)
    throw IoError("malformed embedding dump header: " + path);
  std::string tag(tag_len, '\0');
  in.read(tag.data(), tag_len);

  EmbeddingSet set;
  set.branch = tag;
  set.vectors = Tensor({count, dim});
  set.identities.resize(count);
  set.modalities.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::int64_t id = 0;
    std::uint8_t mod = 0;
    in.read(reinterpret_cast<char*>(&id), sizeof(id));
    in.read(reinterpret_cast<char*>(&mod), sizeof(mod));
    set.identities[i] = static_cast<int>(id);
    set.modalities[i] = mod == 0 ? Modality::kVis : Modality::kNir;
    if (width == 4) {
      for (std::size_t j = 0; j < dim; ++j) {
        float v = 0.0f;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        set.vectors.at2(i, j) = v;
      }
    } else {
      in.read(reinterpret_cast<char*>(set.vectors.data() + i * dim),
              static_cast<std::streamsize>(dim * sizeof(double)));
    }
    if (!in) throw IoError("truncated embedding dump: " + path);
  }
  return set;
}

EmbeddingSet dataset_features_as_embeddings(const Dataset& dataset) {
  MRCN_CHECK(!dataset.samples.empty(), "dataset_features_as_embeddings: empty dataset");
  MRCN_CHECK(!dataset.image_mode, "dataset_features_as_embeddings: feature-mode datasets only");
  const std::size_t n = dataset.size(), d = dataset.samples.front().image.numel();
  EmbeddingSet set;
  set.branch = "raw";
  set.vectors = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = dataset.samples[i];
    MRCN_CHECK(s.image.numel() == d, "dataset_features_as_embeddings: inconsistent dims");
    for (std::size_t j = 0; j < d; ++j) set.vectors.at2(i, j) = s.image[j];
    set.identities.push_back(s.identity);
    set.modalities.push_back(s.modality);
  }
  return set;
}

}  // namespace mrcn
