#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "generator.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace abp {

namespace fs = std::filesystem;
using nlohmann::json;

/// Visual features, class attributes and the seen/unseen split.
struct Dataset {
  Matrix visual;                   // n x D
  Matrix attrs;                    // num_classes x K
  std::vector<int> labels;         // n
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_seen_idx;
  std::vector<std::size_t> test_unseen_idx;
  std::optional<Matrix> mask;      // n x D, binary

  std::size_t size() const { return visual.rows; }
  std::size_t feature_dim() const { return visual.cols; }
  std::size_t attr_dim() const { return attrs.cols; }

  void validate() const {
    if (labels.size() != visual.rows) throw std::runtime_error("Dataset: labels/visual row count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= attrs.rows) {
        throw std::runtime_error("Dataset: label out of range at row " + std::to_string(i));
      }
    }
    std::set<int> seen(seen_classes.begin(), seen_classes.end());
    std::set<int> unseen(unseen_classes.begin(), unseen_classes.end());
    for (int c : seen) {
      if (unseen.count(c)) throw std::runtime_error("Dataset: class " + std::to_string(c) + " both seen and unseen");
    }
    std::set<std::size_t> used;
    auto check_idx = [&](const std::vector<std::size_t>& idx, const char* name) {
      for (std::size_t i : idx) {
        if (i >= visual.rows) throw std::runtime_error(std::string("Dataset: ") + name + " index out of range");
        if (!used.insert(i).second) throw std::runtime_error(std::string("Dataset: index sets overlap at ") + std::to_string(i));
      }
    };
    check_idx(train_idx, "train");
    check_idx(test_seen_idx, "test_seen");
    check_idx(test_unseen_idx, "test_unseen");
    for (std::size_t i : train_idx) {
      if (!seen.count(labels[i])) throw std::runtime_error("Dataset: train index " + std::to_string(i) + " has non-seen label");
    }
    for (std::size_t i : test_unseen_idx) {
      if (!unseen.count(labels[i])) throw std::runtime_error("Dataset: test_unseen index " + std::to_string(i) + " has non-unseen label");
    }
    if (mask) {
      if (mask->rows != visual.rows || mask->cols != visual.cols) {
        throw std::runtime_error("Dataset: mask shape does not match visual");
      }
      for (std::size_t i = 0; i < mask->data.size(); ++i) {
        const double v = mask->data[i];
        if (v != 0.0 && v != 1.0) throw std::runtime_error("Dataset: non-binary mask at entry " + std::to_string(i));
      }
    }
    check_finite(visual, "Dataset visual");
    check_finite(attrs, "Dataset attrs");
  }
};

namespace detail {

inline void require_little_endian() {
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1) {
    throw std::runtime_error("dataio: big-endian hosts are not supported");
  }
}

inline void write_f64(const fs::path& path, const Matrix& m) {
  require_little_endian();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataio: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline Matrix read_f64(const fs::path& path, std::size_t rows, std::size_t cols) {
  require_little_endian();
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("dataio: missing file " + path.string());
  const auto bytes = static_cast<std::size_t>(f.tellg());
  const std::size_t expect = rows * cols * sizeof(double);
  if (bytes != expect) {
    throw std::runtime_error("dataio: " + path.string() + " holds " +
                             std::to_string(bytes / (cols * sizeof(double))) +
                             " rows but manifest declares " + std::to_string(rows));
  }
  Matrix m(rows, cols);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(expect));
  return m;
}

inline json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("dataio: missing file " + path.string());
  json j;
  f >> j;
  return j;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dataio: cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const fs::path& dir) {
  d.validate();
  fs::create_directories(dir);
  json manifest = {
      {"version", 1},
      {"n", d.visual.rows},
      {"D", d.visual.cols},
      {"K", d.attrs.cols},
      {"num_classes", d.attrs.rows},
      {"has_mask", d.mask.has_value()},
      {"endianness", "little"},
      {"dtype", "f64"},
      {"layout", "row-major"},
  };
  detail::write_json(dir / "manifest.json", manifest);
  detail::write_f64(dir / "visual.f64", d.visual);
  detail::write_f64(dir / "attrs.f64", d.attrs);
  {
    std::ofstream f(dir / "labels.csv");
    for (int l : d.labels) f << l << "\n";
  }
  json split = {
      {"seen", d.seen_classes},       {"unseen", d.unseen_classes},
      {"train", d.train_idx},         {"test_seen", d.test_seen_idx},
      {"test_unseen", d.test_unseen_idx},
  };
  detail::write_json(dir / "split.json", split);
  if (d.mask) {
    std::ofstream f(dir / "mask.u8", std::ios::binary);
    std::vector<std::uint8_t> bytes(d.mask->data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = d.mask->data[i] != 0.0 ? 1 : 0;
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

inline Dataset load_dataset(const fs::path& dir) {
  const json manifest = detail::read_json(dir / "manifest.json");
  if (manifest.at("endianness") != "little" || manifest.at("dtype") != "f64" ||
      manifest.at("layout") != "row-major") {
    throw std::runtime_error("dataio: unsupported payload layout in " + (dir / "manifest.json").string());
  }
  const auto n = manifest.at("n").get<std::size_t>();
  const auto feat = manifest.at("D").get<std::size_t>();
  const auto attr = manifest.at("K").get<std::size_t>();
  const auto classes = manifest.at("num_classes").get<std::size_t>();

  Dataset d;
  d.visual = detail::read_f64(dir / "visual.f64", n, feat);
  d.attrs = detail::read_f64(dir / "attrs.f64", classes, attr);
  {
    std::ifstream f(dir / "labels.csv");
    if (!f) throw std::runtime_error("dataio: missing file " + (dir / "labels.csv").string());
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      d.labels.push_back(std::stoi(line));
    }
  }
  const json split = detail::read_json(dir / "split.json");
  d.seen_classes = split.at("seen").get<std::vector<int>>();
  d.unseen_classes = split.at("unseen").get<std::vector<int>>();
  d.train_idx = split.at("train").get<std::vector<std::size_t>>();
  d.test_seen_idx = split.at("test_seen").get<std::vector<std::size_t>>();
  d.test_unseen_idx = split.at("test_unseen").get<std::vector<std::size_t>>();
  if (manifest.at("has_mask").get<bool>()) {
    std::ifstream f(dir / "mask.u8", std::ios::binary);
    if (!f) throw std::runtime_error("dataio: missing file " + (dir / "mask.u8").string());
    std::vector<std::uint8_t> bytes(n * feat);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(f.gcount()) != bytes.size()) {
      throw std::runtime_error("dataio: mask.u8 truncated at byte " + std::to_string(f.gcount()));
    }
    Matrix m(n, feat);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (bytes[i] > 1) {
        throw std::runtime_error("dataio: non-binary mask value " + std::to_string(int(bytes[i])) +
                                 " at byte offset " + std::to_string(i));
      }
      m.data[i] = bytes[i];
    }
    d.mask = std::move(m);
  }
  d.validate();
  return d;
}

///// Desk-scale synthetic benchmark: a fixed random teacher generator emits
/// features for every class, and the seen/unseen split withholds whole
/// classes from training.
struct SynthSpec {
  std::size_t num_seen = 20;
  std::size_t num_unseen = 5;
  std::size_t per_class_train = 100;
  std::size_t per_class_test = 25;
  std::size_t attr_dim = 16;      // K
  std::size_t latent_dim = 10;    // d
  std::size_t feature_dim = 64;   // D
  std::size_t teacher_hidden = 32;
  double teacher_gain = 3.0;        // scales teacher weights so class signal dominates noise
  double teacher_latent_gain = 1.0; // extra multiplier on the latent columns of the teacher's
                                    // first layer; < 1 makes class identity dominate instance noise
  double sigma = 0.3;
  double missing_ratio = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_seen < 2 || num_unseen < 2) throw std::invalid_argument("gen_synth: need >= 2 seen and unseen classes");
    if (missing_ratio < 0.0 || missing_ratio >= 1.0) throw std::invalid_argument("gen_synth: missing_ratio must be in [0, 1)");
  }
};

struct TeacherRecord {
  ModelParams teacher;
};

inline std::pair<Dataset, TeacherRecord> gen_synth(const SynthSpec& spec) {
  spec.validate();
  const std::size_t num_classes = spec.num_seen + spec.num_unseen;

  RngStream attr_rng(spec.seed, Stream::Synthesis, 0);
  RngStream teacher_rng(spec.seed, Stream::Synthesis, 1);
  RngStream sample_rng(spec.seed, Stream::Synthesis, 2);
  RngStream mask_rng(spec.seed, Stream::Synthesis, 3);

  Dataset d;
  d.attrs = Matrix(num_classes, spec.attr_dim);
  for (double& v : d.attrs.data) v = attr_rng.next_unit();

  Dims dims{spec.attr_dim, spec.latent_dim, spec.teacher_hidden, spec.feature_dim};
  ModelParams teacher = init_params(teacher_rng, dims, Activation::LeakyRelu, Activation::Relu, spec.sigma);
  for (double& w : teacher.w1.data) w *= spec.teacher_gain;
  for (double& w : teacher.w2.data) w *= spec.teacher_gain;
  for (std::size_t i = spec.attr_dim; i < spec.attr_dim + spec.latent_dim; ++i)
    for (std::size_t j = 0; j < spec.teacher_hidden; ++j) teacher.w1(i, j) *= spec.teacher_latent_gain;

  auto emit = [&](int cls, std::size_t count, std::vector<std::size_t>& idx_out) {
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t row = d.visual.rows;
      d.visual.rows += 1;
      d.visual.data.resize(d.visual.rows * spec.feature_dim);
      std::vector<double> z = sample_rng.gaussian(spec.latent_dim);
      std::vector<double> x = forward(teacher, d.attrs.row(static_cast<std::size_t>(cls)), z);
      for (std::size_t k = 0; k < spec.feature_dim; ++k) {
        d.visual.row(row)[k] = x[k] + sample_rng.normal(0.0, spec.sigma);
      }
      d.labels.push_back(cls);
      idx_out.push_back(row);
    }
  };

  d.visual = Matrix(0, spec.feature_dim);
  for (std::size_t c = 0; c < spec.num_seen; ++c) {
    d.seen_classes.push_back(static_cast<int>(c));
    emit(static_cast<int>(c), spec.per_class_train, d.train_idx);
    emit(static_cast<int>(c), spec.per_class_test, d.test_seen_idx);
  }
  for (std::size_t c = spec.num_seen; c < num_classes; ++c) {
    d.unseen_classes.push_back(static_cast<int>(c));
    emit(static_cast<int>(c), spec.per_class_test, d.test_unseen_idx);
  }

  if (spec.missing_ratio > 0.0) {
    Matrix m(d.visual.rows, d.visual.cols);
    for (double& v : m.data) v = mask_rng.next_unit() <= spec.missing_ratio ? 0.0 : 1.0;
    d.mask = std::move(m);
  }

  d.validate();
  return {std::move(d), TeacherRecord{std::move(teacher)}};
}

}  // namespace abp
