#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainer.hpp"

namespace abp {

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"langevin_steps", c.langevin.steps},
           {"langevin_step_size", c.langevin.step_size},
           {"langevin_noise", c.langevin.noise_enabled},
           {"sigma", c.sigma},
           {"latent_dim", c.latent_dim},
           {"hidden_dim", c.hidden_dim},
           {"hidden_act", activation_name(c.hidden_act)},
           {"output_act", activation_name(c.output_act)},
           {"leaky_slope", kLeakySlope},
           {"seed", c.seed},
           {"masked", c.masked}};
}

inline void from_json(const json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("langevin_steps").get_to(c.langevin.steps);
  j.at("langevin_step_size").get_to(c.langevin.step_size);
  j.at("langevin_noise").get_to(c.langevin.noise_enabled);
  j.at("sigma").get_to(c.sigma);
  c.langevin.sigma = c.sigma;
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  c.hidden_act = activation_from_name(j.at("hidden_act").get<std::string>());
  c.output_act = activation_from_name(j.at("output_act").get<std::string>());
  j.at("seed").get_to(c.seed);
  j.at("masked").get_to(c.masked);
}

namespace detail {

constexpr char kCheckpointMagic[4] = {'A', 'B', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct ByteWriter {
  std::vector<char> bytes;
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_doubles(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    const char* p = reinterpret_cast<const char*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
  void put_u64s(const std::vector<std::uint64_t>& v) {
    put<std::uint64_t>(v.size());
    const char* p = reinterpret_cast<const char*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(std::uint64_t));
  }
};

struct ByteReader {
  const char* p;
  const char* end;
  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (p + sizeof(T) > end) throw std::runtime_error("checkpoint: truncated section");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (p + n * sizeof(double) > end) throw std::runtime_error("checkpoint: truncated section");
    std::vector<double> v(n);
    std::memcpy(v.data(), p, n * sizeof(double));
    p += n * sizeof(double);
    return v;
  }
  std::vector<std::uint64_t> get_u64s() {
    const auto n = get<std::uint64_t>();
    if (p + n * sizeof(std::uint64_t) > end) throw std::runtime_error("checkpoint: truncated section");
    std::vector<std::uint64_t> v(n);
    std::memcpy(v.data(), p, n * sizeof(std::uint64_t));
    p += n * sizeof(std::uint64_t);
    return v;
  }
};

inline void put_grads(ByteWriter& w, const ParamGrads& g) {
  w.put_doubles(g.w1.data);
  w.put_doubles(g.b1);
  w.put_doubles(g.w2.data);
  w.put_doubles(g.b2);
}

inline void get_grads(ByteReader& r, const ModelParams& shape, ParamGrads& g) {
  g = ParamGrads::zeros_like(shape);
  g.w1.data = r.get_doubles();
  g.b1 = r.get_doubles();
  g.w2.data = r.get_doubles();
  g.b2 = r.get_doubles();
  if (g.w1.data.size() != shape.w1.data.size() || g.w2.data.size() != shape.w2.data.size()) {
    throw std::runtime_error("checkpoint: adam moments do not match param shapes");
  }
}

}  // namespace detail

inline void save_checkpoint(const TrainState& s, const fs::path& path) {
  using detail::ByteWriter;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  f.write(detail::kCheckpointMagic, 4);
  const std::uint32_t ver = detail::kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));

  auto emit = [&](const ByteWriter& w) {
    const std::uint64_t len = w.bytes.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  };

  ByteWriter params;
  params.put<std::uint64_t>(s.params.dims.attr_dim);
  params.put<std::uint64_t>(s.params.dims.latent_dim);
  params.put<std::uint64_t>(s.params.dims.hidden_dim);
  params.put<std::uint64_t>(s.params.dims.feature_dim);
  params.put<std::uint8_t>(static_cast<std::uint8_t>(s.params.hidden_act));
  params.put<std::uint8_t>(static_cast<std::uint8_t>(s.params.output_act));
  params.put<double>(s.params.sigma);
  params.put_doubles(s.params.w1.data);
  params.put_doubles(s.params.b1);
  params.put_doubles(s.params.w2.data);
  params.put_doubles(s.params.b2);
  emit(params);

  ByteWriter latents;
  latents.put<std::uint64_t>(s.bank.z.rows);
  latents.put<std::uint64_t>(s.bank.z.cols);
  latents.put_doubles(s.bank.z.data);
  latents.put_u64s(s.bank.noise_state);
  emit(latents);

  ByteWriter adam;
  adam.put<std::uint64_t>(s.adam.t);
  detail::put_grads(adam, s.adam.m);
  detail::put_grads(adam, s.adam.v);
  emit(adam);

  ByteWriter rng;
  rng.put<std::uint64_t>(s.shuffle_state);
  rng.put<std::uint64_t>(s.epoch);
  emit(rng);

  ByteWriter config;
  const std::string cfg_json = json(s.cfg).dump();
  config.bytes.assign(cfg_json.begin(), cfg_json.end());
  emit(config);
}

inline TrainState load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: missing file " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != detail::kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));
  }
  auto next_section = [&]() {
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path.string());
    std::vector<char> buf(len);
    f.read(buf.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(f.gcount()) != len) {
      throw std::runtime_error("checkpoint: truncated section in " + path.string());
    }
    return buf;
  };

  TrainState s;
  {
    auto buf = next_section();
    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    s.params.dims.attr_dim = r.get<std::uint64_t>();
    s.params.dims.latent_dim = r.get<std::uint64_t>();
    s.params.dims.hidden_dim = r.get<std::uint64_t>();
    s.params.dims.feature_dim = r.get<std::uint64_t>();
    s.params.hidden_act = static_cast<Activation>(r.get<std::uint8_t>());
    s.params.output_act = static_cast<Activation>(r.get<std::uint8_t>());
    s.params.sigma = r.get<double>();
    const std::size_t in = s.params.dims.attr_dim + s.params.dims.latent_dim;
    s.params.w1 = Matrix(in, s.params.dims.hidden_dim);
    s.params.w1.data = r.get_doubles();
    s.params.b1 = r.get_doubles();
    s.params.w2 = Matrix(s.params.dims.hidden_dim, s.params.dims.feature_dim);
    s.params.w2.data = r.get_doubles();
    s.params.b2 = r.get_doubles();
    s.params.validate();
  }
  {
    auto buf = next_section();
    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    s.bank.z = Matrix(rows, cols);
    s.bank.z.data = r.get_doubles();
    s.bank.noise_state = r.get_u64s();
    if (s.bank.z.data.size() != rows * cols || s.bank.noise_state.size() != rows) {
      throw std::runtime_error("checkpoint: latent bank shape mismatch");
    }
  }
  {
    auto buf = next_section();
    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    s.adam.t = r.get<std::uint64_t>();
    detail::get_grads(r, s.params, s.adam.m);
    detail::get_grads(r, s.params, s.adam.v);
  }
  {
    auto buf = next_section();
    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    s.shuffle_state = r.get<std::uint64_t>();
    s.epoch = r.get<std::uint64_t>();
  }
  {
    auto buf = next_section();
    s.cfg = json::parse(std::string(buf.begin(), buf.end())).get<TrainConfig>();
  }
  return s;
}

}  // namespace abp
