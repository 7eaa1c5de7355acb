#pragma once

// Manifests, the synthetic paired-modality fingerprint generator,
// preprocessing and P-K batch sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/image.hpp"
#include "ridgematch/rng.hpp"

namespace ridgematch {

enum class Modality { CL, CB };
enum class Split { Train, Test };

inline const char* to_string(Modality m) { return m == Modality::CL ? "CL" : "CB"; }
inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct Sample {
  std::filesystem::path image_path;  // resolved against the manifest directory
  std::string raw_path;              // as written in the manifest
  std::string subject_id;
  std::string finger_id;
  Modality modality = Modality::CL;
  Split split = Split::Train;
  int rotation = 0;  // degrees, multiple of 90

  std::string identity() const { return subject_id + ":" + finger_id; }
};

inline constexpr const char* kManifestHeader = "path,subject_id,finger_id,modality,split";

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// Header `path,subject_id,finger_id,modality,split`, optionally followed by a
// `rotation` column (degrees, multiple of 90). Blank lines are skipped.
inline std::vector<Sample> load_manifest(const std::filesystem::path& path, bool check_images = true) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open manifest");
  const std::filesystem::path base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: missing header");
  const auto header = detail::split_csv(line);
  const auto expected = detail::split_csv(kManifestHeader);
  const bool with_rotation = header.size() == 6 && header[5] == "rotation";
  if (!std::equal(expected.begin(), expected.end(), header.begin(),
                  header.begin() + std::min(header.size(), expected.size())) ||
      header.size() < expected.size() || (header.size() > 5 && !with_rotation)) {
    throw ParseError(path.string() + ":1: header must be '" + kManifestHeader + "[,rotation]'");
  }
  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (f.size() != header.size()) {
      throw ParseError(where + "expected " + std::to_string(header.size()) + " columns, got " +
                       std::to_string(f.size()));
    }
    Sample s;
    s.raw_path = f[0];
    s.image_path = std::filesystem::path(f[0]).is_absolute() ? std::filesystem::path(f[0]) : base / f[0];
    s.subject_id = f[1];
    s.finger_id = f[2];
    if (s.raw_path.empty() || s.subject_id.empty() || s.finger_id.empty()) {
      throw ParseError(where + "empty path, subject_id or finger_id");
    }
    if (f[3] == "CL") s.modality = Modality::CL;
    else if (f[3] == "CB") s.modality = Modality::CB;
    else throw ParseError(where + "bad modality '" + f[3] + "' (expected CL or CB)");
    if (f[4] == "train") s.split = Split::Train;
    else if (f[4] == "test") s.split = Split::Test;
    else throw ParseError(where + "bad split '" + f[4] + "' (expected train or test)");
    if (with_rotation) {
      try {
        std::size_t used = 0;
        s.rotation = std::stoi(f[5], &used);
        if (used != f[5].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(where + "bad rotation '" + f[5] + "'");
      }
      if (s.rotation % 90 != 0) throw ParseError(where + "rotation must be a multiple of 90");
    }
    if (check_images && !std::filesystem::is_regular_file(s.image_path)) {
      throw ParseError(where + "unreadable image path '" + s.image_path.string() + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << kManifestHeader << "\n";
  for (const Sample& s : samples) {
    out << s.raw_path << "," << s.subject_id << "," << s.finger_id << "," << to_string(s.modality)
        << "," << to_string(s.split) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic ridge patterns

struct IdentityParams {
  double frequency = 0.1;                 // cycles per pixel, in [0.05, 0.25]
  std::array<double, 5> orientation{};    // base angle, linear, cross and saddle terms
  double singularity = 1.0;               // ±1, half-angle winding around the core
  double core_x = 0.0, core_y = 0.0;      // pixels
  double phase = 0.0;
  std::uint64_t seed = 0;
  std::size_t size = 32;

  friend bool operator==(const IdentityParams&, const IdentityParams&) = default;
};

inline IdentityParams synth_identity(std::uint64_t identity_seed, std::size_t size = 32) {
  CounterRng rng(mix_key({identity_seed, hash_string("identity")}));
  IdentityParams p;
  p.seed = identity_seed;
  p.size = size;
  p.frequency = rng.uniform(0.08, 0.2);
  p.orientation[0] = rng.uniform(0.0, std::numbers::pi);
  for (std::size_t i = 1; i < p.orientation.size(); ++i) p.orientation[i] = rng.uniform(-1.5, 1.5);
  p.singularity = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double n = static_cast<double>(size);
  p.core_x = rng.uniform(0.3 * n, 0.7 * n);
  p.core_y = rng.uniform(0.3 * n, 0.7 * n);
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return p;
}

// Canonical ridge intensity in [-1, 1] at pixel coordinates (x, y).
inline double ridge_value(const IdentityParams& id, double x, double y) {
  const double n = static_cast<double>(id.size);
  const double u = x / n - 0.5, v = y / n - 0.5;
  const auto& c = id.orientation;
  const double dx = x - id.core_x, dy = y - id.core_y;
  const double theta = c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * (u * u - v * v) +
                       id.singularity * 0.5 * std::atan2(dy, dx);
  const double proj = dx * std::cos(theta) + dy * std::sin(theta);
  return std::cos(2.0 * std::numbers::pi * id.frequency * proj + id.phase);
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ks = 0;
  for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Image tmp(img.height, img.width), out(img.height, img.width);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.at(y, std::clamp(x + i, 0, w - 1));
      tmp.at(y, x) = static_cast<float>(s);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x);
      out.at(y, x) = static_cast<float>(s);
    }
  return out;
}

// Contact renders are high contrast with a mild elastic jitter; contactless
// renders get reduced contrast, a perspective warp, blur and sensor noise.
inline Image render_fingerprint(const IdentityParams& id, Modality modality, std::uint64_t sample_seed) {
  const std::uint64_t mkey = modality == Modality::CL ? 1 : 2;
  CounterRng pose(mix_key({id.seed, mkey, sample_seed, hash_string("pose")}));
  CounterRng warp(mix_key({id.seed, mkey, sample_seed, hash_string("warp")}));
  CounterRng noise(mix_key({id.seed, mkey, sample_seed, hash_string("noise")}));

  const std::size_t n = id.size;
  const double half = static_cast<double>(n) / 2.0;
  const double angle = pose.uniform(-8.0, 8.0) * std::numbers::pi / 180.0;
  const double tx = pose.uniform(-1.5, 1.5), ty = pose.uniform(-1.5, 1.5);
  const double ca = std::cos(angle), sa = std::sin(angle);

  const bool cl = modality == Modality::CL;
  double amplitude, noise_sd, blur;
  // Elastic jitter (CB) or projective terms (CL).
  double ex = 0, ey = 0, ef = 0, eph = 0, p1 = 0, p2 = 0;
  if (cl) {
    amplitude = warp.uniform(0.28, 0.42);
    noise_sd = 0.035;
    blur = warp.uniform(0.6, 1.0);
    p1 = warp.uniform(-0.12, 0.12);
    p2 = warp.uniform(-0.12, 0.12);
  } else {
    amplitude = warp.uniform(0.88, 0.96);
    noise_sd = 0.015;
    blur = 0.0;
    ex = warp.uniform(-0.6, 0.6);
    ey = warp.uniform(-0.6, 0.6);
    ef = warp.uniform(0.5, 1.5) * 2.0 * std::numbers::pi / static_cast<double>(n);
    eph = warp.uniform(0.0, 2.0 * std::numbers::pi);
  }

  Image img(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double x = static_cast<double>(c) + 0.5 - half, y = static_cast<double>(r) + 0.5 - half;
      if (cl) {
        const double w = 1.0 + p1 * x / half + p2 * y / half;
        x /= w;
        y /= w;
      } else {
        x += ex * std::sin(ef * y + eph);
        y += ey * std::sin(ef * x + eph);
      }
      const double sx = ca * x - sa * y + tx + half;
      const double sy = sa * x + ca * y + ty + half;
      img.at(r, c) = static_cast<float>(0.5 + 0.5 * amplitude * ridge_value(id, sx, sy));
    }
  }
  img = gaussian_blur(img, blur);
  for (auto& v : img.pixels) v = std::clamp(static_cast<float>(v + noise_sd * noise.normal()), 0.0f, 1.0f);
  return img;
}

inline double michelson_contrast(const Image& img) {
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double s = static_cast<double>(*hi) + static_cast<double>(*lo);
  return s > 0 ? (static_cast<double>(*hi) - *lo) / s : 0.0;
}

// ---------------------------------------------------------------------------
// Preprocessing

// Clockwise rotation by quarter turns.
inline Image rotate_quarters(const Image& img, int quarters) {
  quarters = ((quarters % 4) + 4) % 4;
  Image cur = img;
  for (int q = 0; q < quarters; ++q) {
    Image next(cur.width, cur.height);
    for (std::size_t r = 0; r < next.height; ++r)
      for (std::size_t c = 0; c < next.width; ++c) next.at(r, c) = cur.at(cur.height - 1 - c, r);
    cur = std::move(next);
  }
  return cur;
}

// Bilinear with half-pixel centres, so a same-size resize is the identity.
inline Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (img.height == height && img.width == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  for (std::size_t r = 0; r < height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(y), y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (std::size_t c = 0; c < width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(x), x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      const double top = img.at(y0, x0) * (1 - fx) + img.at(y0, x1) * fx;
      const double bot = img.at(y1, x0) * (1 - fx) + img.at(y1, x1) * fx;
      out.at(r, c) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

struct Preprocessed {
  Image image;
  bool constant = false;  // zero dynamic range; image is all zeros
};

inline Preprocessed preprocess(const Image& image, std::size_t target, int rotation_degrees = 0) {
  if (image.empty()) throw DataError("preprocess: empty image");
  if (rotation_degrees % 90 != 0) throw DataError("preprocess: rotation must be a multiple of 90");
  Image img = resize_bilinear(rotate_quarters(image, rotation_degrees / 90), target, target);
  const auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return {Image(target, target, 0.0f), true};
  for (auto& v : img.pixels) v = (v - lo) / (hi - lo);
  return {std::move(img), false};
}

// ---------------------------------------------------------------------------
// Datasets and batches

struct Dataset {
  std::vector<Sample> samples;
  std::vector<Image> images;       // preprocessed, aligned with samples
  std::vector<int> labels;         // dense identity ids, first-appearance order
  std::vector<std::string> identities;
};

inline Dataset build_dataset(std::vector<Sample> samples, std::size_t image_size) {
  Dataset d;
  std::map<std::string, int> ids;
  for (Sample& s : samples) {
    const auto [it, inserted] = ids.emplace(s.identity(), static_cast<int>(d.identities.size()));
    if (inserted) d.identities.push_back(s.identity());
    d.labels.push_back(it->second);
    d.images.push_back(preprocess(read_png(s.image_path), image_size, s.rotation).image);
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& manifest, std::size_t image_size,
                            std::optional<Split> split = std::nullopt) {
  std::vector<Sample> all = load_manifest(manifest), keep;
  for (Sample& s : all)
    if (!split || s.split == *split) keep.push_back(std::move(s));
  return build_dataset(std::move(keep), image_size);
}

struct Batch {
  std::vector<std::size_t> indices;  // into Dataset::samples
  std::vector<int> labels;
  std::vector<Modality> modalities;

  std::size_t size() const { return indices.size(); }
};

// P identities × K samples per modality. Each epoch runs R rounds, R being
// the largest count such that every identity can contribute R disjoint
// K-chunks per modality; every round visits every identity in an order drawn
// from epoch_seed. A short final group is topped up from the start of the
// round's order.
inline std::vector<Batch> make_batches(const std::vector<Sample>& samples, const std::vector<int>& labels,
                                       std::size_t ids_per_batch, std::size_t samples_per_id,
                                       std::uint64_t epoch_seed) {
  if (ids_per_batch < 2) throw ConfigError("make_batches: need at least 2 identities per batch");
  if (samples_per_id < 1) throw ConfigError("make_batches: samples_per_id must be positive");
  if (labels.size() != samples.size()) throw DimensionError("make_batches: labels not aligned");
  std::map<int, std::array<std::vector<std::size_t>, 2>> by_id;
  std::map<int, std::string> names;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_id[labels[i]][samples[i].modality == Modality::CL ? 0 : 1].push_back(i);
    names[labels[i]] = samples[i].identity();
  }
  std::string deficient;
  std::size_t rounds = std::numeric_limits<std::size_t>::max();
  for (const auto& [id, lists] : by_id) {
    const std::size_t n = std::min(lists[0].size(), lists[1].size());
    if (n < samples_per_id) deficient += (deficient.empty() ? "" : ", ") + names[id];
    rounds = std::min(rounds, n / samples_per_id);
  }
  if (!deficient.empty()) {
    throw ConfigError("make_batches: identities with fewer than " + std::to_string(samples_per_id) +
                      " samples per modality: " + deficient);
  }
  if (by_id.size() < ids_per_batch) {
    throw ConfigError("make_batches: " + std::to_string(by_id.size()) + " identities, need " +
                      std::to_string(ids_per_batch));
  }

  CounterRng rng(mix_key({epoch_seed, hash_string("batches")}));
  for (auto& [id, lists] : by_id) {
    for (auto& l : lists) shuffle(l.begin(), l.end(), rng);
  }
  std::vector<int> order;
  for (const auto& [id, _] : by_id) order.push_back(id);

  std::vector<Batch> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += ids_per_batch) {
      std::vector<int> group(order.begin() + start,
                             order.begin() + std::min(order.size(), start + ids_per_batch));
      for (std::size_t k = 0; group.size() < ids_per_batch; ++k) {
        if (std::find(group.begin(), group.end(), order[k]) == group.end()) group.push_back(order[k]);
      }
      Batch b;
      for (int id : group) {
        for (int m = 0; m < 2; ++m) {
          const auto& l = by_id[id][m];
          for (std::size_t k = 0; k < samples_per_id; ++k) {
            const std::size_t idx = l[r * samples_per_id + k];
            b.indices.push_back(idx);
            b.labels.push_back(id);
            b.modalities.push_back(samples[idx].modality);
          }
        }
      }
      out.push_back(std::move(b));
    }
  }
  return out;
}

}  // namespace ridgematch
