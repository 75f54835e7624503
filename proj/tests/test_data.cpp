#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "mrcn/data.hpp"
#include "mrcn/evaluation.hpp"
#include "oracles.hpp"

using namespace mrcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mrcn_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor small_image(double base) {
  Tensor img({3, 6, 4});
  for (std::size_t i = 0; i < img.numel(); ++i)
    img[i] = std::fmod(base + 0.01 * static_cast<double>(i), 1.0);
  return img;
}

}  // namespace

TEST_CASE("pk batches have the exact P x K x modality composition") {
  SyntheticSpec spec;
  spec.num_identities = 8;
  Dataset data = generate_synthetic(spec);

  Rng rng(5);
  PkBatch batch = pk_sample(data, 4, 4, rng);
  CHECK(batch.vis_indices.size() == 16);
  CHECK(batch.nir_indices.size() == 16);
  CHECK(batch.identities.size() == 16);

  std::map<int, std::size_t> vis_counts, nir_counts;
  for (std::size_t i = 0; i < 16; ++i) {
    const Sample& sv = data.samples[batch.vis_indices[i]];
    const Sample& sn = data.samples[batch.nir_indices[i]];
    CHECK(sv.modality == Modality::kVis);
    CHECK(sn.modality == Modality::kNir);
    CHECK(sv.identity == batch.identities[i]);
    CHECK(sn.identity == batch.identities[i]);
    vis_counts[sv.identity]++;
    nir_counts[sn.identity]++;
  }
  CHECK(vis_counts.size() == 4);
  for (const auto& [id, count] : vis_counts) CHECK(count == 4);
  for (const auto& [id, count] : nir_counts) CHECK(count == 4);
}

TEST_CASE("pk sampling: minimal batch, determinism, failure below P identities") {
  SyntheticSpec spec;
  spec.num_identities = 3;
  spec.samples_per_identity_per_modality = 2;
  Dataset data = generate_synthetic(spec);

  Rng rng_a(9), rng_b(9);
  PkBatch a = pk_sample(data, 1, 1, rng_a);
  CHECK(a.vis_indices.size() == 1);
  CHECK(a.nir_indices.size() == 1);

  PkBatch b = pk_sample(data, 1, 1, rng_b);
  CHECK(a.vis_indices == b.vis_indices);
  CHECK(a.nir_indices == b.nir_indices);

  Rng rng_c(9);
  CHECK_THROWS_AS(pk_sample(data, 4, 2, rng_c), ContractViolation);
}

TEST_CASE("pk sampling resamples with replacement when an identity is short") {
  Dataset data;
  data.image_mode = false;
  for (int rep = 0; rep < 2; ++rep) {
    Sample v;
    v.identity = 0;
    v.modality = Modality::kVis;
    v.image = Tensor({16});
    data.samples.push_back(v);
  }
  Sample n;
  n.identity = 0;
  n.modality = Modality::kNir;
  n.image = Tensor({16});
  data.samples.push_back(n);  // only one NIR sample

  Rng rng(2);
  PkBatch batch = pk_sample(data, 1, 4, rng);
  CHECK(batch.nir_indices.size() == 4);
  for (std::size_t idx : batch.nir_indices) CHECK(idx == 2);
}

TEST_CASE("augmentation resizes, flips and erases") {
  Rng rng(7);
  Tensor img = small_image(0.2);

  SUBCASE("output dims always match the target") {
    AugmentConfig cfg;
    for (int i = 0; i < 5; ++i) {
      Tensor out = augment(img, cfg, rng);
      CHECK(out.shape() == std::vector<std::size_t>{3, 288, 128});
    }
  }
  SUBCASE("flip is an involution") {
    Tensor twice = flip_horizontal(flip_horizontal(img));
    CHECK(max_abs_diff(twice, img) == 0.0);
  }
  SUBCASE("erasing touches exactly the rectangle") {
    Tensor modified = img;
    EraseRect rect{2, 1, 3, 2};
    erase_region(modified, rect, rng);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          const bool inside = y >= 2 && y < 5 && x >= 1 && x < 3;
          if (!inside) CHECK(modified.at3(c, y, x) == img.at3(c, y, x));
        }
  }
  SUBCASE("sampled rectangles respect bounds and the area range") {
    AugmentConfig cfg;
    for (int i = 0; i < 50; ++i) {
      auto rect = sample_erase_rect(288, 128, cfg, rng);
      REQUIRE(rect.has_value());
      CHECK(rect->y + rect->h <= 288);
      CHECK(rect->x + rect->w <= 128);
      const double ratio = static_cast<double>(rect->h * rect->w) / (288.0 * 128.0);
      CHECK(ratio > 0.0);
      CHECK(ratio < 0.45);
    }
  }
  SUBCASE("degenerate input is rejected") {
    Tensor bad({3, 6});
    AugmentConfig cfg;
    CHECK_THROWS_AS(augment(bad, cfg, rng), ContractViolation);
    CHECK_THROWS_AS(resize_bilinear(bad, 10, 10), ContractViolation);
  }
}

TEST_CASE("synthetic generator degenerate cases") {
  SUBCASE("no noise, no offset: modalities coincide per identity") {
    SyntheticSpec spec;
    spec.num_identities = 3;
    spec.samples_per_identity_per_modality = 2;
    spec.noise_scale = 0.0;
    spec.modality_offset_scale = 0.0;
    Dataset data = generate_synthetic(spec);
    for (int id = 0; id < 3; ++id) {
      const auto vis = data.indices_of(id, Modality::kVis);
      const auto nir = data.indices_of(id, Modality::kNir);
      for (std::size_t i : vis)
        for (std::size_t j : nir)
          CHECK(max_abs_diff(data.samples[i].image, data.samples[j].image) == 0.0);
    }
  }
  SUBCASE("large offset, no noise: a threshold on the offset direction separates modalities") {
    SyntheticSpec spec;
    spec.num_identities = 6;
    spec.samples_per_identity_per_modality = 4;
    spec.noise_scale = 0.0;
    spec.modality_offset_scale = 50.0;
    Dataset data = generate_synthetic(spec);

    const std::size_t d = spec.id_signal_dim;
    std::vector<double> mean_v(d, 0.0), mean_n(d, 0.0);
    std::size_t nv = 0, nn = 0;
    for (const Sample& s : data.samples) {
      auto& acc = s.modality == Modality::kVis ? mean_v : mean_n;
      (s.modality == Modality::kVis ? nv : nn)++;
      for (std::size_t i = 0; i < d; ++i) acc[i] += s.image[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      mean_v[i] /= static_cast<double>(nv);
      mean_n[i] /= static_cast<double>(nn);
    }
    double min_vis = 1e300, max_nir = -1e300;
    for (const Sample& s : data.samples) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += s.image[i] * (mean_v[i] - mean_n[i]);
      if (s.modality == Modality::kVis)
        min_vis = std::min(min_vis, proj);
      else
        max_nir = std::max(max_nir, proj);
    }
    CHECK(min_vis > max_nir);
  }
  SUBCASE("fixed seed reproduces the dataset bitwise") {
    SyntheticSpec spec;
    Dataset a = generate_synthetic(spec);
    Dataset b = generate_synthetic(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.samples[i].identity == b.samples[i].identity);
      CHECK(a.samples[i].modality == b.samples[i].modality);
      CHECK(a.samples[i].image.storage() == b.samples[i].image.storage());
    }
  }
}

TEST_CASE("default synthetic data carries a removable modality signal and a usable identity signal") {
  SyntheticSpec spec;  // defaults: 20 identities, 10 per modality
  Dataset data = generate_synthetic(spec);
  CHECK(data.size() == 20 * 10 * 2);
  EmbeddingSet raw = dataset_features_as_embeddings(data);
  CHECK(modality_probe(raw) >= 0.95);
  const double id_acc = nearest_centroid_identity_accuracy(raw);
  CHECK(id_acc > 2.0 / 20.0);  // well above chance
}

TEST_CASE("image-mode generator produces images and textures differ by identity") {
  SyntheticSpec spec;
  spec.image_mode = true;
  spec.num_identities = 2;
  spec.samples_per_identity_per_modality = 1;
  spec.image_height = 16;
  spec.image_width = 8;
  spec.noise_scale = 0.0;
  Dataset data = generate_synthetic(spec);
  CHECK(data.image_mode);
  CHECK(data.samples.front().image.shape() == std::vector<std::size_t>{3, 16, 8});
  CHECK(max_abs_diff(data.samples[0].image, data.samples[2].image) > 1e-3);
}

TEST_CASE("dataset container round-trips bitwise") {
  SyntheticSpec spec;
  spec.num_identities = 4;
  spec.samples_per_identity_per_modality = 3;
  Dataset data = generate_synthetic(spec);
  const fs::path dir = temp_dir("container");
  const std::string path = (dir / "data.bin").string();
  save_dataset(data, path);
  Dataset loaded = load_dataset(path);

  REQUIRE(loaded.size() == data.size());
  CHECK(loaded.image_mode == data.image_mode);
  REQUIRE(loaded.synthetic_spec.has_value());
  CHECK(loaded.synthetic_spec->seed == spec.seed);
  CHECK(loaded.synthetic_spec->num_identities == spec.num_identities);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(loaded.samples[i].identity == data.samples[i].identity);
    CHECK(loaded.samples[i].modality == data.samples[i].modality);
    CHECK(loaded.samples[i].camera == data.samples[i].camera);
    CHECK(loaded.samples[i].image.storage() == data.samples[i].image.storage());
  }

  std::ofstream bad((dir / "bad.bin").string(), std::ios::binary);
  bad << "garbage";
  bad.close();
  CHECK_THROWS_AS(load_dataset((dir / "bad.bin").string()), IoError);
}

TEST_CASE("ppm round trip within 8-bit quantization") {
  const fs::path dir = temp_dir("ppm");
  Tensor img = small_image(0.1);
  const std::string path = (dir / "img.ppm").string();
  write_ppm(path, img);
  Tensor back = read_netpbm(path);
  REQUIRE(back.shape() == img.shape());
  CHECK(max_abs_diff(back, img) <= 1.0 / 255.0 + 1e-9);
}

TEST_CASE("directory loader parses the documented layout") {
  const fs::path root = temp_dir("layout");

  SUBCASE("minimal two-file layout") {
    fs::create_directories(root / "0001" / "vis");
    fs::create_directories(root / "0001" / "nir");
    write_ppm((root / "0001" / "vis" / "cam1_0.ppm").string(), small_image(0.3));
    write_ppm((root / "0001" / "nir" / "cam3_0.ppm").string(), small_image(0.6));
    Dataset data = load_directory(root.string());
    REQUIRE(data.size() == 2);
    CHECK(data.identities() == std::vector<int>{1});
    CHECK(data.indices_of(1, Modality::kVis).size() == 1);
    CHECK(data.indices_of(1, Modality::kNir).size() == 1);
    CHECK(data.samples[0].camera == 1);
    CHECK(data.samples[1].camera == 3);
  }
  SUBCASE("missing modality subdirectory names the directory") {
    fs::create_directories(root / "0002" / "vis");
    write_ppm((root / "0002" / "vis" / "cam1_0.ppm").string(), small_image(0.3));
    try {
      load_directory(root.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("0002") != std::string::npos);
      CHECK(std::string(e.what()).find("nir") != std::string::npos);
    }
  }
  SUBCASE("malformed filename is reported with its path") {
    fs::create_directories(root / "0003" / "vis");
    fs::create_directories(root / "0003" / "nir");
    write_ppm((root / "0003" / "vis" / "noseparator.ppm").string(), small_image(0.3));
    write_ppm((root / "0003" / "nir" / "cam1_0.ppm").string(), small_image(0.4));
    CHECK_THROWS_AS(load_directory(root.string()), IoError);
  }
  SUBCASE("5 identities x 2 modalities x 3 images -> 30 samples") {
    for (int id = 1; id <= 5; ++id) {
      for (const char* mod : {"vis", "nir"}) {
        fs::create_directories(root / std::to_string(id) / mod);
        for (int k = 0; k < 3; ++k)
          write_ppm((root / std::to_string(id) / mod / ("cam1_" + std::to_string(k) + ".ppm"))
                        .string(),
                    small_image(0.1 * id + 0.05 * k));
      }
    }
    Dataset data = load_directory(root.string());
    CHECK(data.size() == 30);
    CHECK(data.identities().size() == 5);
  }
  SUBCASE("empty root is an error") {
    const fs::path empty = temp_dir("empty_layout");
    CHECK_THROWS_AS(load_directory(empty.string()), IoError);
  }
}

TEST_CASE("export_directory round-trips through load_directory") {
  SyntheticSpec spec;
  spec.image_mode = true;
  spec.num_identities = 2;
  spec.samples_per_identity_per_modality = 2;
  spec.image_height = 8;
  spec.image_width = 6;
  Dataset data = generate_synthetic(spec);
  const fs::path root = temp_dir("export");
  export_directory(data, root.string());
  Dataset loaded = load_directory(root.string());
  CHECK(loaded.size() == data.size());
  CHECK(loaded.identities() == data.identities());
}

TEST_CASE("feature map layout and batch assembly") {
  std::size_t c, h, w;
  feature_map_layout(32, &c, &h, &w);
  CHECK(c == 2);
  CHECK(h == 4);
  CHECK(w == 4);
  CHECK_THROWS_AS(feature_map_layout(30, &c, &h, &w), ContractViolation);

  SyntheticSpec spec;
  spec.num_identities = 2;
  spec.samples_per_identity_per_modality = 2;
  Dataset data = generate_synthetic(spec);
  const auto vis = data.indices_of(0, Modality::kVis);
  ModalityBatch batch = assemble_batch(data, vis, Modality::kVis);
  CHECK(batch.map.data.shape() == std::vector<std::size_t>{2, 2, 4, 4});
  CHECK(batch.ids == std::vector<int>{0, 0});
  // flattened map equals the stored vector
  for (std::size_t i = 0; i < 32; ++i)
    CHECK(batch.map.data[i] == data.samples[vis[0]].image[i]);

  const auto nir = data.indices_of(0, Modality::kNir);
  CHECK_THROWS_AS(assemble_batch(data, nir, Modality::kVis), ContractViolation);
}
