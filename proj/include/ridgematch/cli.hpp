#pragma once

// Command implementations behind tools/ridgematch. Each command takes a plain
// options struct and writes its artifacts itself, so tests can drive them
// without spawning processes.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ridgematch/checkpoint.hpp"
#include "ridgematch/data.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/image.hpp"
#include "ridgematch/metrics.hpp"
#include "ridgematch/trainer.hpp"

namespace ridgematch::cli {

// Bad command-line usage (exit code 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kSeedEnv = "RIDGEMATCH_SEED";

inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e)) return 3;
  return 3;
}

inline std::string fmt_g(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Run configuration: flat key=value, '#' comments.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos) {
    try {
      return static_cast<std::size_t>(std::stoull(v));
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

struct Key {
  const char* name;
  const char* doc;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define RM_SIZE_KEY(NAME, FIELD, DOC)                                                           \
  Key {                                                                                         \
    NAME, DOC, [](TrainConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_size(k, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.FIELD); }                            \
  }
#define RM_REAL_KEY(NAME, FIELD, DOC)                                                             \
  Key {                                                                                           \
    NAME, DOC, [](TrainConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); }, \
        [](const TrainConfig& c) { return format_double(c.FIELD); }                               \
  }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      Key{"stage", "1 or 2",
          [](TrainConfig& c, const std::string& key, const std::string& v) {
            c.stage = static_cast<int>(to_size(key, v));
          },
          [](const TrainConfig& c) { return std::to_string(c.stage); }},
      RM_SIZE_KEY("epochs", epochs, "training epochs"),
      RM_REAL_KEY("base_lr", base_lr, "initial learning rate"),
      Key{"lr_milestones", "comma-separated epochs where the rate is multiplied by lr_decay (empty: 60% and 85%)",
          [](TrainConfig& c, const std::string& key, const std::string& v) {
            c.lr_milestones.clear();
            std::istringstream in(v);
            for (std::string item; std::getline(in, item, ',');) {
              item = trim(item);
              if (!item.empty()) c.lr_milestones.push_back(to_size(key, item));
            }
          },
          [](const TrainConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.lr_milestones.size(); ++i)
              s += (i ? "," : "") + std::to_string(c.lr_milestones[i]);
            return s;
          }},
      RM_REAL_KEY("lr_decay", lr_decay, "multiplicative decay per milestone, in (0, 1]"),
      RM_SIZE_KEY("ids_per_batch", ids_per_batch, "identities per batch (P)"),
      RM_SIZE_KEY("samples_per_id", samples_per_id, "samples per identity and modality (K)"),
      Key{"seed", "training seed",
          [](TrainConfig& c, const std::string& key, const std::string& v) { c.seed = to_size(key, v); },
          [](const TrainConfig& c) { return std::to_string(c.seed); }},
      RM_REAL_KEY("weight_decay", weight_decay, "AdamW decoupled weight decay"),
      RM_REAL_KEY("beta1", beta1, "AdamW first-moment decay"),
      RM_REAL_KEY("beta2", beta2, "AdamW second-moment decay"),
      RM_REAL_KEY("adam_eps", adam_eps, "AdamW denominator epsilon"),
      RM_REAL_KEY("grad_clip", grad_clip, "global gradient-norm clip (0 disables)"),
      Key{"unfreeze_encoder", "stage 2: also update encoder parameters",
          [](TrainConfig& c, const std::string& key, const std::string& v) { c.unfreeze_encoder = to_bool(key, v); },
          [](const TrainConfig& c) { return std::string(c.unfreeze_encoder ? "true" : "false"); }},
      RM_REAL_KEY("loss.alpha_pos", loss.alpha_pos, "positive scale"),
      RM_REAL_KEY("loss.alpha_neg", loss.alpha_neg, "negative scale"),
      RM_REAL_KEY("loss.tau", loss.tau, "similarity threshold"),
      RM_REAL_KEY("loss.margin", loss.margin, "hard-pair mining margin"),
      RM_SIZE_KEY("encoder.image_size", encoder.image_size, "input side length in pixels"),
      RM_SIZE_KEY("encoder.patch_size", encoder.patch_size, "patch side length"),
      RM_SIZE_KEY("encoder.width", encoder.width, "token width d"),
      RM_SIZE_KEY("encoder.layers", encoder.layers, "transformer blocks"),
      RM_SIZE_KEY("encoder.heads", encoder.heads, "attention heads"),
      RM_SIZE_KEY("encoder.mlp_hidden", encoder.mlp_hidden, "block MLP hidden width"),
      RM_SIZE_KEY("encoder.head_hidden", encoder.head_hidden, "embedding head hidden width (0: single layer)"),
      RM_SIZE_KEY("encoder.embed_dim", encoder.embed_dim, "global embedding size"),
      RM_REAL_KEY("encoder.ln_eps", encoder.ln_eps, "layer norm epsilon"),
      RM_SIZE_KEY("fusion.blocks", fusion.blocks, "cross-attention blocks"),
      RM_SIZE_KEY("fusion.width", fusion.width, "fusion token width (must equal encoder.width)"),
      RM_SIZE_KEY("fusion.heads", fusion.heads, "cross-attention heads"),
      RM_SIZE_KEY("fusion.mlp_hidden", fusion.mlp_hidden, "fusion MLP hidden width"),
      RM_REAL_KEY("fusion.ln_eps", fusion.ln_eps, "fusion layer norm epsilon"),
  };
  return k;
}

#undef RM_SIZE_KEY
#undef RM_REAL_KEY

}  // namespace detail

inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : detail::keys()) {
    if (key == k.name) {
      k.set(cfg, key, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Applies every key=value line of `text`; returns the keys that were set.
inline std::set<std::string> apply_config_text(TrainConfig& cfg, const std::string& text,
                                               const std::string& origin = "config") {
  std::set<std::string> seen;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      apply_setting(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    seen.insert(key);
  }
  return seen;
}

inline std::set<std::string> load_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return apply_config_text(cfg, ss.str(), path.string());
}

// Every key with its current value and a comment; valid config-file input.
inline std::string dump_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : detail::keys()) out += std::string("# ") + k.doc + "\n" + k.name + "=" + k.get(cfg) + "\n";
  return out;
}

inline TrainConfig preset(const std::string& name, int stage) {
  if (stage != 1 && stage != 2) throw UsageError("--stage must be 1 or 2");
  if (name == "desk") return stage == 1 ? desk_stage1() : desk_stage2();
  if (name == "full") return stage == 1 ? full_stage1() : full_stage2();
  if (name == "full-finetune") {
    if (stage != 1) throw UsageError("preset full-finetune is a stage 1 preset");
    return full_finetune();
  }
  throw UsageError("unknown preset '" + name + "' (expected desk, full or full-finetune)");
}

// Default seed: RIDGEMATCH_SEED when set, else `fallback`.
inline std::uint64_t default_seed(std::uint64_t fallback = 0) {
  const char* env = std::getenv(kSeedEnv);
  if (!env || !*env) return fallback;
  try {
    return detail::to_size(kSeedEnv, env);
  } catch (const ConfigError&) {
    throw UsageError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + env + "'");
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::filesystem::path out;
  std::size_t identities = 8;
  std::size_t samples_per_modality = 4;
  std::size_t height = 32, width = 32;
  std::uint64_t seed = 0;
  std::size_t test_identities = 0;  // the last N identities go to the test split
};

inline std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x != std::string::npos) {
      const std::size_t h = detail::to_size("--size", s.substr(0, x));
      const std::size_t w = detail::to_size("--size", s.substr(x + 1));
      if (h > 0 && w > 0) return {h, w};
    }
  } catch (const ConfigError&) {
  }
  throw UsageError("--size must look like 32x32, got '" + s + "'");
}

inline std::vector<Sample> cmd_synth(const SynthOptions& o) {
  if (o.identities < 2) throw UsageError("--identities must be at least 2");
  if (o.samples_per_modality < 1) throw UsageError("--samples-per-modality must be at least 1");
  if (o.test_identities >= o.identities) throw UsageError("--test-identities must be below --identities");
  std::error_code ec;
  std::filesystem::create_directories(o.out / "images", ec);
  if (ec) throw DataError("cannot create " + (o.out / "images").string() + ": " + ec.message());

  const std::size_t side = std::max(o.height, o.width);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < o.identities; ++i) {
    const IdentityParams id = synth_identity(mix_key({o.seed, i, hash_string("synth-identity")}), side);
    char subject[32];
    std::snprintf(subject, sizeof subject, "s%03zu", i);
    for (Modality m : {Modality::CL, Modality::CB}) {
      for (std::size_t k = 0; k < o.samples_per_modality; ++k) {
        Image img = render_fingerprint(id, m, k);
        if (o.height != side || o.width != side) img = resize_bilinear(img, o.height, o.width);
        const std::string rel = std::string("images/") + subject + "_f0_" + to_string(m) + "_" + std::to_string(k) + ".png";
        write_png(o.out / rel, img);
        Sample s;
        s.raw_path = rel;
        s.image_path = o.out / rel;
        s.subject_id = subject;
        s.finger_id = "f0";
        s.modality = m;
        s.split = i + o.test_identities >= o.identities ? Split::Test : Split::Train;
        samples.push_back(std::move(s));
      }
    }
  }
  write_manifest(o.out / "manifest.csv", samples);
  return samples;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  int stage = 1;
  std::string preset = "desk";
  std::optional<std::filesystem::path> config;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> init;
  std::filesystem::path out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;  // key=value overrides
};

// Preset, then RIDGEMATCH_SEED, then the config file, then --set, then the
// dedicated flags. Returns the keys set explicitly.
inline std::set<std::string> resolve_config(const TrainOptions& o, TrainConfig& cfg) {
  cfg = preset(o.preset, o.stage);
  cfg.seed = default_seed(cfg.seed);
  std::set<std::string> explicit_keys;
  if (o.config) explicit_keys = load_config_file(cfg, *o.config);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string key = detail::trim(kv.substr(0, eq));
    apply_setting(cfg, key, kv.substr(eq + 1));
    explicit_keys.insert(key);
  }
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.seed) cfg.seed = *o.seed;
  if (cfg.stage != o.stage) {
    throw ConfigError("config sets stage=" + std::to_string(cfg.stage) + " but --stage is " + std::to_string(o.stage));
  }
  return explicit_keys;
}

inline Checkpoint cmd_train(const TrainOptions& o, std::ostream& log) {
  if (o.stage != 1 && o.stage != 2) throw UsageError("--stage must be 1 or 2");
  if (o.stage == 2 && !o.init) throw UsageError("stage 2 training requires --init <stage-1 checkpoint>");
  if (o.stage == 1 && o.init) throw UsageError("--init is only used by stage 2");
  if (o.out.empty()) throw UsageError("--out is required");
  TrainConfig cfg;
  const std::set<std::string> explicit_keys = resolve_config(o, cfg);

  std::optional<Checkpoint> init;
  if (o.init) {
    init = load_checkpoint(*o.init);
    // The encoder architecture comes from the init checkpoint unless the
    // config pins it, in which case the two must agree.
    const EncoderConfig pinned = cfg.encoder;
    bool pins = false;
    for (const auto& k : explicit_keys) pins = pins || k.rfind("encoder.", 0) == 0;
    cfg.encoder = init->encoder;
    if (!explicit_keys.count("fusion.width")) cfg.fusion.width = cfg.encoder.width;
    if (pins && !(pinned == init->encoder)) {
      throw ConfigError("encoder.* keys in the config do not match the encoder of " + o.init->string());
    }
  }
  cfg.validate();

  const Dataset train = load_dataset(o.manifest, cfg.encoder.image_size, Split::Train);
  if (train.samples.empty()) throw DataError(o.manifest.string() + ": no train samples");

  log << "epoch,loss,lr\n";
  auto on_epoch = [&log](std::size_t epoch, double loss, double lr) {
    log << epoch << "," << fmt_g(loss) << "," << fmt_g(lr) << "\n" << std::flush;
  };
  Checkpoint ck = o.stage == 1 ? train_stage1(cfg, train, on_epoch) : train_stage2(cfg, train, *init, on_epoch);
  save_checkpoint(o.out, ck);
  return ck;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path out;
};

inline void cmd_embed(const EmbedOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset d = build_dataset(load_manifest(o.manifest), ck.encoder.image_size);
  std::ostringstream csv;
  csv << "sample_path,subject_id,finger_id,modality";
  for (std::size_t k = 0; k < ck.encoder.embed_dim; ++k) csv << ",e_" << k;
  csv << "\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const auto e = embed_tokens(encode_tokens(d.images[i], ck.encoder_params, ck.encoder), ck.encoder_params, ck.encoder);
    csv << s.raw_path << "," << s.subject_id << "," << s.finger_id << "," << to_string(s.modality);
    for (float v : e.values.data()) csv << "," << fmt_g(v);
    csv << "\n";
  }
  write_file_atomic(o.out, csv.str());
}

// ---------------------------------------------------------------------------
// match

struct MatchOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path probe;
  std::filesystem::path gallery;
  int stage = 1;
  double fusion_weight = 1.0;
  bool exclude_self = false;  // drop pairs whose probe and gallery image is the same file
  std::filesystem::path out;
};

inline bool same_file(const Sample& a, const Sample& b) {
  std::error_code ec;
  const bool eq = std::filesystem::equivalent(a.image_path, b.image_path, ec);
  return ec ? a.image_path.lexically_normal() == b.image_path.lexically_normal() : eq;
}

inline void cmd_match(const MatchOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset probes = build_dataset(load_manifest(o.probe), ck.encoder.image_size);
  const Dataset gallery = build_dataset(load_manifest(o.gallery), ck.encoder.image_size);
  if (probes.samples.empty()) throw ProtocolError(o.probe.string() + ": empty probe set");
  if (gallery.samples.empty()) throw ProtocolError(o.gallery.string() + ": empty gallery set");
  const Matrix<double> s = score_matrix(ck, probes.images, gallery.images, o.stage, o.fusion_weight);
  std::ostringstream csv;
  csv << "probe_path,gallery_path,score\n";
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) {
      if (o.exclude_self && same_file(probes.samples[i], gallery.samples[j])) continue;
      csv << probes.samples[i].raw_path << "," << gallery.samples[j].raw_path << "," << fmt_g(s(i, j)) << "\n";
    }
  write_file_atomic(o.out, csv.str());
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  // Either a score file with the manifests that label its paths...
  std::optional<std::filesystem::path> scores;
  std::vector<std::filesystem::path> label_manifests;
  // ...or a checkpoint evaluated on a manifest's test split.
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::string> protocol;
  int stage = 1;
  double fusion_weight = 1.0;
  std::vector<double> fars;  // empty: 0.1 and 0.01
  std::size_t max_rank = 10;
  std::optional<std::filesystem::path> out;
};

// Rows and columns in first-appearance order; pairs absent from the file are
// masked.
inline SimilarityMatrix read_score_file(const std::filesystem::path& path,
                                        const std::vector<std::filesystem::path>& manifests) {
  std::map<std::string, std::string> identity;
  for (const auto& m : manifests)
    for (const Sample& s : load_manifest(m, false)) identity[s.raw_path] = s.identity();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "probe_path,gallery_path,score") {
    throw ParseError(path.string() + ":1: header must be 'probe_path,gallery_path,score'");
  }
  std::map<std::string, std::size_t> rows, cols;
  std::vector<std::string> row_names, col_names;
  struct Entry {
    std::size_t r, c;
    double v;
  };
  std::vector<Entry> entries;
  std::size_t lineno = 1;
  auto index = [](std::map<std::string, std::size_t>& m, std::vector<std::string>& names, const std::string& k) {
    const auto [it, inserted] = m.emplace(k, names.size());
    if (inserted) names.push_back(k);
    return it->second;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = ridgematch::detail::split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (f.size() != 3) throw ParseError(where + "expected 3 columns");
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(where + "bad score '" + f[2] + "'");
    }
    for (const auto* p : {&f[0], &f[1]}) {
      if (!identity.count(*p)) throw ProtocolError(where + "path '" + *p + "' is not in any label manifest");
    }
    entries.push_back({index(rows, row_names, f[0]), index(cols, col_names, f[1]), v});
  }
  if (entries.empty()) throw ProtocolError(path.string() + ": no scores");
  std::map<std::string, int> label_of;
  auto label = [&](const std::string& p) {
    return label_of.emplace(identity[p], static_cast<int>(label_of.size())).first->second;
  };
  std::vector<int> rl, cl;
  for (const auto& n : row_names) rl.push_back(label(n));
  for (const auto& n : col_names) cl.push_back(label(n));
  Matrix<double> s(rl.size(), cl.size());
  std::vector<std::uint8_t> present(s.size(), 0);
  for (const Entry& e : entries) {
    s(e.r, e.c) = e.v;
    present[e.r * cl.size() + e.c] = 1;
  }
  SimilarityMatrix S(std::move(s), std::move(rl), std::move(cl));
  for (std::size_t i = 0; i < present.size(); ++i) S.masked[i] = present[i] ? 0 : 1;
  return S;
}

inline std::string far_key(double f) { return fmt_g(f, 6); }

inline std::string format_report(const ScoreReport& r, const std::string& source) {
  std::ostringstream o;
  o << "# ridgematch evaluation report\n";
  o << "# source: " << source << "\n";
  o << "# genuine pairs: " << r.genuine_count << ", impostor pairs: " << r.impostor_count << "\n";
  o << "# EER: " << fmt_g(100.0 * r.eer, 6) << "%\n";
  for (const auto& [f, t] : r.tar_at_far) {
    o << "# TAR@FAR=" << far_key(f) << ": " << fmt_g(100.0 * t.tar, 6) << "% (threshold " << fmt_g(t.threshold, 6)
      << (t.low_resolution ? ", low resolution" : "") << ")\n";
  }
  for (std::size_t k = 0; k < r.cmc.size(); ++k) o << "# Rank-" << k + 1 << ": " << fmt_g(100.0 * r.cmc[k], 6) << "%\n";
  o << "genuine_count=" << r.genuine_count << "\n";
  o << "impostor_count=" << r.impostor_count << "\n";
  o << "eer=" << format_double(r.eer) << "\n";
  for (const auto& [f, t] : r.tar_at_far) {
    const std::string k = "tar_at_far." + far_key(f);
    o << k << "=" << format_double(t.tar) << "\n";
    o << k << ".far=" << format_double(t.far) << "\n";
    o << k << ".threshold=" << format_double(t.threshold) << "\n";
    o << k << ".low_resolution=" << (t.low_resolution ? 1 : 0) << "\n";
  }
  for (std::size_t k = 0; k < r.cmc.size(); ++k) o << "cmc." << k + 1 << "=" << format_double(r.cmc[k]) << "\n";
  return o.str();
}

// Key=value lines of a report, for scripts and tests.
inline std::map<std::string, std::string> parse_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline ScoreReport cmd_eval(const EvalOptions& o, std::string* text = nullptr) {
  const std::vector<double> fars = o.fars.empty() ? std::vector<double>{0.1, 0.01} : o.fars;
  for (double f : fars)
    if (!(f > 0.0 && f < 1.0)) throw UsageError("--far values must lie in (0, 1)");
  if (o.max_rank < 1) throw UsageError("--max-rank must be at least 1");
  ScoreReport r;
  std::string source;
  if (o.scores) {
    if (o.checkpoint) throw UsageError("use either --scores or --checkpoint, not both");
    if (o.label_manifests.empty()) throw UsageError("--scores needs --labels manifests to recover identities");
    r = score_report(read_score_file(*o.scores, o.label_manifests), fars, o.max_rank);
    source = o.scores->string();
  } else if (o.checkpoint) {
    if (!o.manifest) throw UsageError("--checkpoint needs --manifest");
    if (!o.protocol) throw UsageError("--checkpoint needs --protocol cl2cb|cl2cl");
    Protocol protocol;
    try {
      protocol = parse_protocol(*o.protocol);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    const Checkpoint ck = load_checkpoint(*o.checkpoint);
    const Dataset test = load_dataset(*o.manifest, ck.encoder.image_size, Split::Test);
    if (test.samples.empty()) throw ProtocolError(o.manifest->string() + ": no test samples");
    r = evaluate(ck, test, protocol, o.stage, o.fusion_weight, fars, o.max_rank);
    source = o.checkpoint->string() + " on " + o.manifest->string() + " (" + to_string(protocol) + ", stage " +
             std::to_string(o.stage) + ")";
  } else {
    throw UsageError("eval needs --scores or --checkpoint");
  }
  const std::string report = format_report(r, source);
  if (o.out) write_file_atomic(*o.out, report);
  if (text) *text = report;
  return r;
}

}  // namespace ridgematch::cli
