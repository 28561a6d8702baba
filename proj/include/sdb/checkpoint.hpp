#pragma once

// Versioned structured-text checkpoint: every parameter tensor by name and
// shape, hexfloat payload for exact round-trips, FNV-1a checksum over the
// payload, and the embedded configuration needed to rebuild the model.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdb/config.hpp"
#include "sdb/model.hpp"

namespace sdb {

struct ChecksumMismatchError : std::runtime_error {
  ChecksumMismatchError() : std::runtime_error("ChecksumMismatch: corrupt checkpoint payload") {}
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename Scalar>
std::string hexfloat(Scalar v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", static_cast<double>(v));
  return buf;
}

}  // namespace detail

template <typename Scalar>
std::string serialize_checkpoint(SDBModel<Scalar>& model, const Config& cfg) {
  std::ostringstream payload;
  payload << "scalar " << (sizeof(Scalar) == 8 ? "float64" : "float32") << "\n";
  payload << "noise_norm_ema " << detail::hexfloat(model.noise_norm_ema) << " "
          << (model.noise_norm_ready ? 1 : 0) << "\n";
  model.visit_params([&payload](const std::string& group, const std::string& name, Tensor<Scalar>& t) {
    payload << "tensor " << group << " " << name << " " << t.value.rows() << " " << t.value.cols() << "\n";
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j)
        payload << (j ? " " : "") << detail::hexfloat(t.value(i, j));
      payload << "\n";
    }
  });
  std::ostringstream out;
  out << "sdbnav-checkpoint 1\n";
  out << "checksum " << detail::fnv1a(payload.str()) << "\n";
  out << "config-begin\n" << serialize_config(cfg) << "config-end\n";
  out << payload.str();
  return out.str();
}

template <typename Scalar>
void save_checkpoint(const std::string& path, SDBModel<Scalar>& model, const Config& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot write '" + path + "'");
  out << serialize_checkpoint(model, cfg);
}

// Reads the embedded config block without validating the payload.
inline Config peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("sdbnav-checkpoint", 0) != 0)
    throw ValidationError("checkpoint: bad magic in '" + path + "'");
  std::getline(in, line);  // checksum
  std::getline(in, line);
  if (line != "config-begin") throw ValidationError("checkpoint: missing config block");
  std::ostringstream cfg_text;
  while (std::getline(in, line) && line != "config-end") cfg_text << line << "\n";
  Config cfg;
  std::istringstream cfg_in(cfg_text.str());
  apply_config_text(cfg, cfg_in);
  return cfg;
}

template <typename Scalar>
void load_checkpoint(const std::string& path, SDBModel<Scalar>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("sdbnav-checkpoint", 0) != 0)
    throw ValidationError("checkpoint: bad magic in '" + path + "'");
  std::getline(in, line);
  std::uint64_t expected = 0;
  {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag >> expected;
    if (tag != "checksum") throw ValidationError("checkpoint: missing checksum line");
  }
  std::getline(in, line);
  if (line != "config-begin") throw ValidationError("checkpoint: missing config block");
  while (std::getline(in, line) && line != "config-end") {
  }
  std::ostringstream payload;
  while (std::getline(in, line)) payload << line << "\n";
  if (detail::fnv1a(payload.str()) != expected) throw ChecksumMismatchError();

  std::istringstream ps(payload.str());
  std::string tag;
  ps >> tag;
  if (tag != "scalar") throw ValidationError("checkpoint: missing scalar width");
  std::string width;
  ps >> width;
  ps >> tag;
  if (tag != "noise_norm_ema") throw ValidationError("checkpoint: missing noise norm state");
  {
    std::string hex;
    int ready = 0;
    ps >> hex >> ready;
    model.noise_norm_ema = static_cast<Scalar>(std::strtod(hex.c_str(), nullptr));
    model.noise_norm_ready = ready != 0;
  }
  std::map<std::string, Tensor<Scalar>*> by_name;
  model.visit_params([&by_name](const std::string&, const std::string& name, Tensor<Scalar>& t) {
    by_name[name] = &t;
  });
  std::size_t loaded = 0;
  while (ps >> tag) {
    if (tag != "tensor") throw ValidationError("checkpoint: unexpected token '" + tag + "'");
    std::string group, name;
    Eigen::Index rows = 0, cols = 0;
    ps >> group >> name >> rows >> cols;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("checkpoint: unknown tensor '" + name + "'");
    Tensor<Scalar>& t = *it->second;
    if (t.value.rows() != rows || t.value.cols() != cols)
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::string hex;
        ps >> hex;
        t.value(i, j) = static_cast<Scalar>(std::strtod(hex.c_str(), nullptr));
      }
    ++loaded;
  }
  if (loaded != by_name.size()) throw ValidationError("checkpoint: missing tensors");
}

}  // namespace sdb
