// Copyright 2026 The npo-unlearn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Synthetic Gaussian-logistic forget/retain data.
//
//   forget:  x ~ N( alpha 1_d, I_d),  P(y=1|x) = sigmoid((x - mu_f)^T theta_f + 1)
//   retain:  x ~ N(-alpha 1_d, I_d),  P(y=1|x) = sigmoid((x - mu_r)^T theta_r - 1)
//
// with theta_f = -theta_r = 1_d / sqrt(d). Each split draws covariates and
// labels from its own counter stream, so resizing one split never perturbs
// the other.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "npo/errors.hpp"
#include "npo/io.hpp"
#include "npo/numerics.hpp"
#include "npo/rng.hpp"

namespace npo {

using Labels = Eigen::VectorXi;

enum class Split { Forget, Retain, Full };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Forget: return "forget";
    case Split::Retain: return "retain";
    case Split::Full: return "full";
  }
  return "unknown";
}

inline Split split_from_string(const std::string& s) {
  if (s == "forget") return Split::Forget;
  if (s == "retain") return Split::Retain;
  if (s == "full") return Split::Full;
  throw ConfigError("unknown split '" + s + "'");
}

struct Dataset {
  Matrix X;  // n x d
  Labels y;  // n entries in {0,1}
  Split split = Split::Forget;
  double alpha = 0.0;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
  bool empty() const { return X.rows() == 0; }
};

struct GenerationParams {
  double alpha = 1.0;
  int d = 16;
  int n_forget = 200;
  int n_retain = 1000;
  std::uint64_t seed = 0;
};

namespace detail {

inline Dataset draw_split(Split split, double alpha, int d, int n, std::uint64_t seed) {
  const double sign = split == Split::Forget ? 1.0 : -1.0;
  const double mean = sign * alpha;
  const double theta_j = sign / std::sqrt(static_cast<double>(d));
  const double shift = sign;

  CounterRng cov = CounterRng::stream(seed, to_string(split), "covariates");
  CounterRng lab = CounterRng::stream(seed, to_string(split), "labels");

  Dataset ds;
  ds.X.resize(n, d);
  ds.y.resize(n);
  ds.split = split;
  ds.alpha = alpha;
  ds.seed = seed;
  for (int i = 0; i < n; ++i) {
    double z = shift;
    for (int j = 0; j < d; ++j) {
      const double centered = cov.normal();
      ds.X(i, j) = mean + centered;
      z += centered * theta_j;
    }
    ds.y(i) = lab.bernoulli(sigmoid(z)) ? 1 : 0;
  }
  return ds;
}

}  // namespace detail

/// Forget and retain datasets for one seed.
inline std::pair<Dataset, Dataset> generate_pair(const GenerationParams& p) {
  if (p.d < 1) throw ConfigError("generate_pair: d must be >= 1");
  if (p.n_forget < 1 || p.n_retain < 1) throw ConfigError("generate_pair: sizes must be >= 1");
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw ConfigError("generate_pair: alpha must be finite and >= 0");
  return {detail::draw_split(Split::Forget, p.alpha, p.d, p.n_forget, p.seed),
          detail::draw_split(Split::Retain, p.alpha, p.d, p.n_retain, p.seed)};
}

inline std::pair<Dataset, Dataset> generate_pair(double alpha, int d, int n_forget, int n_retain,
                                                 std::uint64_t seed) {
  return generate_pair(GenerationParams{alpha, d, n_forget, n_retain, seed});
}

/// Bern(0.5) surrogate labels, independent of the dataset's own labels.
inline Labels bern_half_targets(const Dataset& ds, std::uint64_t seed) {
  if (ds.empty()) throw ConfigError("bern_half_targets: empty dataset");
  CounterRng rng = CounterRng::stream(seed, to_string(ds.split), "bern_half");
  Labels out(ds.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = rng.bernoulli(0.5) ? 1 : 0;
  return out;
}

/// Row-wise concatenation (forget rows first).
inline Dataset concatenate(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim()) throw ShapeError("concatenate: covariate dimensions differ");
  Dataset out;
  out.X.resize(a.size() + b.size(), a.dim());
  out.X << a.X, b.X;
  out.y.resize(a.size() + b.size());
  out.y << a.y, b.y;
  out.split = Split::Full;
  out.alpha = a.alpha;
  out.seed = a.seed;
  return out;
}

inline void validate_labels(const Labels& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0 && y(i) != 1) throw ConfigError("labels must be 0 or 1");
  }
}

// ---------------------------------------------------------------------------
// CSV + metadata sidecar

inline std::string dataset_to_csv(const Dataset& ds) {
  std::string out;
  for (Eigen::Index j = 0; j < ds.dim(); ++j) {
    out += "x_" + std::to_string(j) + ",";
  }
  out += "y\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      out += io::format_double(ds.X(i, j));
      out += ',';
    }
    out += std::to_string(ds.y(i));
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json dataset_metadata(const Dataset& ds, int n_forget, int n_retain) {
  nlohmann::ordered_json j;
  j["alpha"] = ds.alpha;
  j["seed"] = ds.seed;
  j["split"] = to_string(ds.split);
  j["n"] = ds.size();
  j["d"] = ds.dim();
  j["n_forget"] = n_forget;
  j["n_retain"] = n_retain;
  return j;
}

/// Writes `<stem>.csv` and `<stem>.meta.json`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& stem, int n_forget,
                         int n_retain) {
  std::filesystem::path csv = stem;
  csv += ".csv";
  std::filesystem::path meta = stem;
  meta += ".meta.json";
  io::write_file_atomic(csv, dataset_to_csv(ds));
  io::write_file_atomic(meta, dataset_metadata(ds, n_forget, n_retain).dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& stem) {
  std::filesystem::path csv = stem;
  csv += ".csv";
  std::filesystem::path meta = stem;
  meta += ".meta.json";
  const auto m = nlohmann::json::parse(io::read_file(meta));
  const Eigen::Index n = m.at("n").get<Eigen::Index>();
  const Eigen::Index d = m.at("d").get<Eigen::Index>();

  Dataset ds;
  ds.alpha = m.at("alpha").get<double>();
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.split = split_from_string(m.at("split").get<std::string>());
  ds.X.resize(n, d);
  ds.y.resize(n);

  std::istringstream in(io::read_file(csv));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file " + csv.string());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IoError("dataset file truncated: " + csv.string());
    std::istringstream row(line);
    std::string cell;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!std::getline(row, cell, ',')) throw IoError("short row in " + csv.string());
      ds.X(i, j) = std::stod(cell);
    }
    if (!std::getline(row, cell, ',')) throw IoError("missing label in " + csv.string());
    ds.y(i) = std::stoi(cell);
  }
  validate_labels(ds.y);
  return ds;
}

}  // namespace npo
