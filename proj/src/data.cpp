#include "mrcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrcn/check.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mrcn {

void SyntheticSpec::validate() const {
  MRCN_CHECK(num_identities >= 1, "SyntheticSpec: num_identities must be >= 1");
  MRCN_CHECK(samples_per_identity_per_modality >= 1,
             "SyntheticSpec: samples_per_identity_per_modality must be >= 1");
  MRCN_CHECK(id_signal_dim >= 1, "SyntheticSpec: id_signal_dim must be >= 1");
  MRCN_CHECK(modality_offset_scale >= 0.0 && noise_scale >= 0.0,
             "SyntheticSpec: scales must be >= 0");
  if (!image_mode) {
    MRCN_CHECK(id_signal_dim % 16 == 0,
               "SyntheticSpec: feature mode needs id_signal_dim divisible by 16 "
               "(vectors are viewed as C x 4 x 4 maps)");
  } else {
    MRCN_CHECK(image_height >= 2 && image_width >= 2, "SyntheticSpec: image dims too small");
  }
}

std::vector<int> Dataset::identities() const {
  std::vector<int> ids;
  for (const Sample& s : samples) ids.push_back(s.identity);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<int> Dataset::paired_identities() const {
  std::map<int, std::pair<bool, bool>> seen;
  for (const Sample& s : samples) {
    auto& e = seen[s.identity];
    (s.modality == Modality::kVis ? e.first : e.second) = true;
  }
  std::vector<int> out;
  for (const auto& [id, mods] : seen) {
    if (mods.first && mods.second) out.push_back(id);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of(int identity, Modality m) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].identity == identity && samples[i].modality == m) out.push_back(i);
  }
  return out;
}

void feature_map_layout(std::size_t dim, std::size_t* channels, std::size_t* height,
                        std::size_t* width) {
  MRCN_CHECK(dim % 16 == 0 && dim >= 16, "feature_map_layout: dim must be a multiple of 16");
  *channels = dim / 16;
  *height = 4;
  *width = 4;
}

namespace {

// Smooth identity-specific texture in [-1, 1].
double texture_value(const std::vector<double>& freqs, std::size_t channel, double y, double x) {
  const std::size_t base = channel * 6;
  double acc = 0.0;
  acc += std::sin(freqs[base + 0] * y + freqs[base + 1]);
  acc += std::sin(freqs[base + 2] * x + freqs[base + 3]);
  acc += std::sin(freqs[base + 4] * (x + y) + freqs[base + 5]);
  return acc / 3.0;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset out;
  out.image_mode = spec.image_mode;
  out.synthetic_spec = spec;

  if (!spec.image_mode) {
    std::size_t c, h, w;
    feature_map_layout(spec.id_signal_dim, &c, &h, &w);
    const std::size_t hw = h * w;
    // One DC offset value per channel per modality, broadcast spatially, so
    // the modality signature lives exactly in per-channel statistics. The two
    // patterns mirror each other with a fixed per-channel magnitude and a
    // random sign, so the realized modality gap never collapses by draw luck.
    std::vector<double> off_v(c), off_n(c);
    for (std::size_t i = 0; i < c; ++i) {
      const double value = (rng.uniform() < 0.5 ? -0.5 : 0.5) * spec.modality_offset_scale;
      off_v[i] = value;
      off_n[i] = -value;
    }

    for (std::size_t id = 0; id < spec.num_identities; ++id) {
      // Identity signal = fine spatial structure plus, on alternating
      // channels, a per-channel DC level. The DC part is exactly what
      // instance normalization removes, so the restitution path has identity
      // content to recover; the DC-free channels keep the raw modality
      // offsets cleanly exposed to a linear probe.
      std::vector<double> signal(spec.id_signal_dim);
      for (double& v : signal) v = rng.gaussian();
      for (std::size_t ch = 0; ch < c; ch += 2) {
        const double dc = rng.gaussian();
        for (std::size_t i = 0; i < hw; ++i) signal[ch * hw + i] += dc;
      }
      for (Modality m : {Modality::kVis, Modality::kNir}) {
        const std::vector<double>& off = (m == Modality::kVis) ? off_v : off_n;
        for (std::size_t s = 0; s < spec.samples_per_identity_per_modality; ++s) {
          Sample sample;
          sample.identity = static_cast<int>(id);
          sample.modality = m;
          sample.camera = static_cast<int>(s % 2);
          sample.image = Tensor({spec.id_signal_dim});
          for (std::size_t i = 0; i < spec.id_signal_dim; ++i) {
            sample.image[i] = signal[i] + off[i / hw] + rng.gaussian() * spec.noise_scale;
          }
          out.samples.push_back(std::move(sample));
        }
      }
    }
    return out;
  }

  // Image mode: per-channel DC color offsets plus an identity-specific
  // sinusoidal texture shared across modalities.
  std::vector<double> off_v(3), off_n(3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double value = (rng.uniform() < 0.5 ? -0.125 : 0.125) * spec.modality_offset_scale;
    off_v[i] = value;
    off_n[i] = -value;
  }

  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    std::vector<double> freqs(3 * 6);
    for (std::size_t i = 0; i < freqs.size(); i += 2) {
      freqs[i] = rng.uniform(0.2, 1.2);                       // frequency
      freqs[i + 1] = rng.uniform(0.0, 2.0 * std::numbers::pi);  // phase
    }
    for (Modality m : {Modality::kVis, Modality::kNir}) {
      const std::vector<double>& off = (m == Modality::kVis) ? off_v : off_n;
      for (std::size_t s = 0; s < spec.samples_per_identity_per_modality; ++s) {
        Sample sample;
        sample.identity = static_cast<int>(id);
        sample.modality = m;
        sample.camera = static_cast<int>(s % 2);
        sample.image = Tensor({3, spec.image_height, spec.image_width});
        for (std::size_t ch = 0; ch < 3; ++ch) {
          for (std::size_t y = 0; y < spec.image_height; ++y) {
            for (std::size_t x = 0; x < spec.image_width; ++x) {
              const double t = texture_value(freqs, ch, static_cast<double>(y),
                                             static_cast<double>(x));
              sample.image.at3(ch, y, x) =
                  0.5 + 0.25 * t + off[ch] + rng.gaussian() * spec.noise_scale;
            }
          }
        }
        out.samples.push_back(std::move(sample));
      }
    }
  }
  return out;
}

Dataset subset_by_identities(const Dataset& dataset, const std::set<int>& keep) {
  Dataset out;
  out.image_mode = dataset.image_mode;
  out.synthetic_spec = dataset.synthetic_spec;
  for (const Sample& s : dataset.samples) {
    if (keep.count(s.identity)) out.samples.push_back(s);
  }
  return out;
}

namespace {

constexpr char kDatasetMagic[8] = {'M', 'R', 'C', 'N', 'D', 'S', '1', '\n'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

json spec_to_json(const SyntheticSpec& s) {
  return {{"num_identities", s.num_identities},
          {"samples_per_identity_per_modality", s.samples_per_identity_per_modality},
          {"id_signal_dim", s.id_signal_dim},
          {"modality_offset_scale", s.modality_offset_scale},
          {"noise_scale", s.noise_scale},
          {"seed", s.seed},
          {"image_mode", s.image_mode},
          {"image_height", s.image_height},
          {"image_width", s.image_width}};
}

SyntheticSpec spec_from_json(const json& j) {
  SyntheticSpec s;
  s.num_identities = j.at("num_identities").get<std::size_t>();
  s.samples_per_identity_per_modality = j.at("samples_per_identity_per_modality").get<std::size_t>();
  s.id_signal_dim = j.at("id_signal_dim").get<std::size_t>();
  s.modality_offset_scale = j.at("modality_offset_scale").get<double>();
  s.noise_scale = j.at("noise_scale").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.image_mode = j.at("image_mode").get<bool>();
  s.image_height = j.at("image_height").get<std::size_t>();
  s.image_width = j.at("image_width").get<std::size_t>();
  return s;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
  MRCN_CHECK(!dataset.samples.empty(), "save_dataset: refusing to write an empty dataset");
  const auto& shape = dataset.samples.front().image.shape();
  for (const Sample& s : dataset.samples)
    MRCN_CHECK(s.image.shape() == shape, "save_dataset: samples must share one shape");

  json header;
  header["image_mode"] = dataset.image_mode;
  header["count"] = dataset.samples.size();
  header["sample_shape"] = shape;
  header["synthetic_spec"] =
      dataset.synthetic_spec ? spec_to_json(*dataset.synthetic_spec) : json(nullptr);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset file for writing: " + path);
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const Sample& s : dataset.samples) {
    const std::int32_t id = s.identity;
    const std::uint8_t mod = s.modality == Modality::kVis ? 0 : 1;
    const std::int32_t cam = s.camera;
    out.write(reinterpret_cast<const char*>(&id), sizeof(id));
    out.write(reinterpret_cast<const char*>(&mod), sizeof(mod));
    out.write(reinterpret_cast<const char*>(&cam), sizeof(cam));
    out.write(reinterpret_cast<const char*>(s.image.data()),
              static_cast<std::streamsize>(s.image.numel() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
    throw IoError("not an mrcn dataset container: " + path);
  const std::uint64_t header_len = read_u64(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated dataset header: " + path);

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw IoError("malformed dataset header in " + path + ": " + e.what());
  }
  Dataset out;
  out.image_mode = header.at("image_mode").get<bool>();
  if (!header.at("synthetic_spec").is_null())
    out.synthetic_spec = spec_from_json(header.at("synthetic_spec"));
  const auto count = header.at("count").get<std::size_t>();
  const auto shape = header.at("sample_shape").get<std::vector<std::size_t>>();

  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    std::int32_t id = 0, cam = 0;
    std::uint8_t mod = 0;
    in.read(reinterpret_cast<char*>(&id), sizeof(id));
    in.read(reinterpret_cast<char*>(&mod), sizeof(mod));
    in.read(reinterpret_cast<char*>(&cam), sizeof(cam));
    s.identity = id;
    s.modality = mod == 0 ? Modality::kVis : Modality::kNir;
    s.camera = cam;
    s.image = Tensor(shape);
    in.read(reinterpret_cast<char*>(s.image.data()),
            static_cast<std::streamsize>(s.image.numel() * sizeof(double)));
    if (!in) throw IoError("truncated dataset record in " + path);
    out.samples.push_back(std::move(s));
  }
  return out;
}

PkBatch pk_sample(const Dataset& dataset, std::size_t p, std::size_t k, Rng& rng) {
  MRCN_CHECK(p >= 1 && k >= 1, "pk_sample: P and K must be >= 1");
  std::vector<int> eligible = dataset.paired_identities();
  MRCN_CHECK(eligible.size() >= p,
             "pk_sample: dataset has " + std::to_string(eligible.size()) +
                 " identities with both modalities, need P=" + std::to_string(p));

  rng.shuffle(eligible);
  eligible.resize(p);

  PkBatch batch;
  auto pick = [&](const std::vector<std::size_t>& pool) {
    std::vector<std::size_t> chosen;
    if (pool.size() >= k) {
      std::vector<std::size_t> order(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) order[i] = i;
      rng.shuffle(order);
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(pool[order[i]]);
    } else {
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(pool[rng.integer(pool.size())]);
    }
    return chosen;
  };

  for (int id : eligible) {
    const auto vis = pick(dataset.indices_of(id, Modality::kVis));
    const auto nir = pick(dataset.indices_of(id, Modality::kNir));
    for (std::size_t i = 0; i < k; ++i) {
      batch.vis_indices.push_back(vis[i]);
      batch.nir_indices.push_back(nir[i]);
      batch.identities.push_back(id);
    }
  }
  return batch;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  MRCN_CHECK(image.rank() == 3, "resize_bilinear: expected (C, H, W) image");
  MRCN_CHECK(out_h >= 1 && out_w >= 1, "resize_bilinear: degenerate target size");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  MRCN_CHECK(h >= 1 && w >= 1, "resize_bilinear: degenerate input image");
  Tensor out({c, out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = y * sy;
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = x * sx;
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v = (1 - wy) * ((1 - wx) * image.at3(ch, y0, x0) + wx * image.at3(ch, y0, x1)) +
                         wy * ((1 - wx) * image.at3(ch, y1, x0) + wx * image.at3(ch, y1, x1));
        out.at3(ch, y, x) = v;
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  MRCN_CHECK(image.rank() == 3, "flip_horizontal: expected (C, H, W) image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at3(ch, y, x) = image.at3(ch, y, w - 1 - x);
  return out;
}

void erase_region(Tensor& image, const EraseRect& rect, Rng& rng) {
  MRCN_CHECK(image.rank() == 3, "erase_region: expected (C, H, W) image");
  MRCN_CHECK(rect.y + rect.h <= image.dim(1) && rect.x + rect.w <= image.dim(2),
             "erase_region: rectangle out of bounds");
  for (std::size_t ch = 0; ch < image.dim(0); ++ch)
    for (std::size_t y = rect.y; y < rect.y + rect.h; ++y)
      for (std::size_t x = rect.x; x < rect.x + rect.w; ++x)
        image.at3(ch, y, x) = rng.uniform();
}

std::optional<EraseRect> sample_erase_rect(std::size_t h, std::size_t w, const AugmentConfig& cfg,
                                           Rng& rng) {
  const double area = static_cast<double>(h * w);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) * area;
    const double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
    const auto rh = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto rw = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (rh == 0 || rw == 0 || rh >= h || rw >= w) continue;
    EraseRect rect;
    rect.y = static_cast<std::size_t>(rng.integer(h - rh));
    rect.x = static_cast<std::size_t>(rng.integer(w - rw));
    rect.h = rh;
    rect.w = rw;
    return rect;
  }
  return std::nullopt;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  MRCN_CHECK(image.rank() == 3 && image.dim(1) >= 1 && image.dim(2) >= 1,
             "augment: degenerate image");
  Tensor out = resize_bilinear(image, cfg.target_height, cfg.target_width);
  if (rng.uniform() < cfg.flip_prob) out = flip_horizontal(out);
  if (rng.uniform() < cfg.erase_prob) {
    if (auto rect = sample_erase_rect(cfg.target_height, cfg.target_width, cfg, rng)) {
      erase_region(out, *rect, rng);
    }
  }
  return out;
}

ModalityBatch assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             Modality expected, const AugmentConfig* aug, Rng* rng) {
  MRCN_CHECK(!indices.empty(), "assemble_batch: empty index list");
  ModalityBatch out;
  out.map.modality = expected;

  std::vector<Tensor> maps;
  maps.reserve(indices.size());
  for (std::size_t idx : indices) {
    MRCN_CHECK(idx < dataset.samples.size(), "assemble_batch: index out of range");
    const Sample& s = dataset.samples[idx];
    MRCN_CHECK(s.modality == expected, "assemble_batch: sample modality does not match batch");
    out.ids.push_back(s.identity);
    if (s.image.rank() == 1) {
      std::size_t c, h, w;
      feature_map_layout(s.image.dim(0), &c, &h, &w);
      Tensor map({c, h, w});
      map.storage() = s.image.storage();
      maps.push_back(std::move(map));
    } else if (aug) {
      MRCN_CHECK(rng != nullptr, "assemble_batch: augmentation requires an rng");
      maps.push_back(augment(s.image, *aug, *rng));
    } else {
      maps.push_back(s.image);
    }
  }
  const auto& shape = maps.front().shape();
  for (const Tensor& m : maps)
    MRCN_CHECK(m.shape() == shape, "assemble_batch: samples must share one map shape");

  out.map.data = Tensor({indices.size(), shape[0], shape[1], shape[2]});
  const std::size_t per = maps.front().numel();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::copy(maps[i].data(), maps[i].data() + per, out.map.data.data() + i * per);
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  MRCN_CHECK(image.rank() == 3 && image.dim(0) == 3, "write_ppm: expected (3, H, W) image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open image for writing: " + path);
  const std::size_t h = image.dim(1), w = image.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at3(c, y, x), 0.0, 1.0);
        const auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
        out.put(static_cast<char>(byte));
      }
    }
  }
  if (!out) throw IoError("failed writing image: " + path);
}

namespace {

int next_pnm_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments.
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw IoError("malformed netpbm header: " + path);
  return value;
}

}  // namespace

Tensor read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") throw IoError("unsupported image format in " + path +
                                                    " (only binary PPM/PGM are supported)");
  const int w = next_pnm_int(in, path);
  const int h = next_pnm_int(in, path);
  const int maxval = next_pnm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError("unsupported netpbm dimensions/maxval in " + path);
  in.get();  // single whitespace after maxval

  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated image data: " + path);

  Tensor img({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < static_cast<std::size_t>(h); ++y) {
    for (std::size_t x = 0; x < static_cast<std::size_t>(w); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * w + x) * channels + (channels == 3 ? c : 0);
        img.at3(c, y, x) = raw[src] * inv;
      }
    }
  }
  return img;
}

namespace {

int parse_trailing_int(const std::string& token, const std::string& context) {
  std::size_t start = token.size();
  while (start > 0 && std::isdigit(static_cast<unsigned char>(token[start - 1]))) --start;
  if (start == token.size()) throw IoError("cannot parse integer from '" + token + "' in " + context);
  return std::stoi(token.substr(start));
}

}  // namespace

Dataset load_directory(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);
  Dataset out;
  out.image_mode = true;

  std::vector<fs::path> id_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) id_dirs.push_back(entry.path());
  }
  std::sort(id_dirs.begin(), id_dirs.end());
  if (id_dirs.empty()) throw IoError("no identity directories under " + root);

  for (const fs::path& id_dir : id_dirs) {
    int identity = 0;
    try {
      identity = std::stoi(id_dir.filename().string());
    } catch (const std::exception&) {
      throw IoError("identity directory name is not an integer: " + id_dir.string());
    }
    for (Modality m : {Modality::kVis, Modality::kNir}) {
      const fs::path mod_dir = id_dir / to_string(m);
      if (!fs::is_directory(mod_dir))
        throw IoError("missing modality subdirectory: " + mod_dir.string());
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(mod_dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& file : files) {
        const std::string stem = file.stem().string();
        const auto sep = stem.find('_');
        if (sep == std::string::npos)
          throw IoError("malformed sample filename (expected <camera>_<index>): " + file.string());
        Sample s;
        s.camera = parse_trailing_int(stem.substr(0, sep), file.string());
        s.identity = identity;
        s.modality = m;
        s.image = read_netpbm(file.string());
        out.samples.push_back(std::move(s));
      }
    }
  }
  if (out.samples.empty()) throw IoError("dataset is empty under " + root);
  return out;
}

void export_directory(const Dataset& dataset, const std::string& root) {
  MRCN_CHECK(dataset.image_mode, "export_directory: dataset must be in image mode");
  std::map<std::pair<int, int>, std::size_t> counters;  // (identity, modality) -> index
  for (const Sample& s : dataset.samples) {
    std::ostringstream id_name;
    id_name.width(4);
    id_name.fill('0');
    id_name << s.identity;
    const fs::path dir = fs::path(root) / id_name.str() / to_string(s.modality);
    fs::create_directories(dir);
    const int mod_key = s.modality == Modality::kVis ? 0 : 1;
    const std::size_t index = counters[{s.identity, mod_key}]++;
    const std::string name =
        "cam" + std::to_string(s.camera < 0 ? 0 : s.camera) + "_" + std::to_string(index) + ".ppm";
    write_ppm((dir / name).string(), s.image);
  }
}

}  // namespace mrcn
