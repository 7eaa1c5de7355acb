#pragma once

// Single-file checkpoint: a text header of key=value lines and parameter
// declarations, terminated by "end\n", followed by the parameter blocks as
// raw 32-bit little-endian row-major floats in declaration order.
//
//   ridgematch-checkpoint 1
//   stage=1
//   ...
//   param patch_embed.w 64 64
//   ...
//   end

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ridgematch/encoder.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/fusion.hpp"
#include "ridgematch/msloss.hpp"
#include "ridgematch/params.hpp"

namespace ridgematch {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "ridgematch-checkpoint";

struct Checkpoint {
  int stage = 1;
  EncoderConfig encoder;
  FusionConfig fusion;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::vector<double> loss_trace;  // mean loss per epoch
  ParamStore<float> encoder_params;
  ParamStore<float> fusion_params;  // empty for stage 1

  bool has_fusion() const { return !fusion_params.empty(); }
};

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

inline void write_f32_le(std::ostream& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  out.write(b, 4);
}

inline float read_f32_le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(u);
}

}  // namespace detail

// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::ostringstream h;
  h << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  h << "stage=" << c.stage << "\n";
  h << "seed=" << c.seed << "\n";
  h << "epochs=" << c.epochs << "\n";
  const EncoderConfig& e = c.encoder;
  h << "encoder.image_size=" << e.image_size << "\n"
    << "encoder.patch_size=" << e.patch_size << "\n"
    << "encoder.width=" << e.width << "\n"
    << "encoder.layers=" << e.layers << "\n"
    << "encoder.heads=" << e.heads << "\n"
    << "encoder.mlp_hidden=" << e.mlp_hidden << "\n"
    << "encoder.head_hidden=" << e.head_hidden << "\n"
    << "encoder.embed_dim=" << e.embed_dim << "\n"
    << "encoder.ln_eps=" << format_double(e.ln_eps) << "\n";
  const FusionConfig& f = c.fusion;
  h << "fusion.blocks=" << f.blocks << "\n"
    << "fusion.width=" << f.width << "\n"
    << "fusion.heads=" << f.heads << "\n"
    << "fusion.mlp_hidden=" << f.mlp_hidden << "\n"
    << "fusion.ln_eps=" << format_double(f.ln_eps) << "\n";
  h << "loss.alpha_pos=" << format_double(c.loss.alpha_pos) << "\n"
    << "loss.alpha_neg=" << format_double(c.loss.alpha_neg) << "\n"
    << "loss.tau=" << format_double(c.loss.tau) << "\n"
    << "loss.margin=" << format_double(c.loss.margin) << "\n";
  h << "loss_trace=";
  for (std::size_t i = 0; i < c.loss_trace.size(); ++i) h << (i ? "," : "") << format_double(c.loss_trace[i]);
  h << "\n";
  for (const auto* store : {&c.encoder_params, &c.fusion_params})
    for (const auto& [name, m] : *store) h << "param " << name << " " << m.rows() << " " << m.cols() << "\n";
  h << "end\n";
  for (const auto* store : {&c.encoder_params, &c.fusion_params})
    for (const auto& [_, m] : *store)
      for (float v : m.data()) detail::write_f32_le(h, v);
  return h.str();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, serialize_checkpoint(c));
}

// Names and shapes of `actual` must equal those of `expected`, in order.
inline void check_layout(const ParamStore<float>& actual, const ParamStore<float>& expected,
                         const std::string& what) {
  if (actual.size() != expected.size()) {
    throw ConfigError(what + " parameter count " + std::to_string(actual.size()) + " vs expected " +
                      std::to_string(expected.size()));
  }
  auto a = actual.begin();
  for (auto e = expected.begin(); e != expected.end(); ++e, ++a) {
    if (a->first != e->first || !a->second.same_shape(e->second)) {
      throw ConfigError(what + " parameter " + a->first + " " + a->second.shape_string() +
                        " does not match expected " + e->first + " " + e->second.shape_string());
    }
  }
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw ParseError(origin + ": truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  std::istringstream first(next_line());
  std::string magic;
  int version = 0;
  first >> magic >> version;
  if (magic != kCheckpointMagic) throw ParseError(origin + ": not a ridgematch checkpoint");
  if (version != kCheckpointVersion) {
    throw ParseError(origin + ": unsupported checkpoint version " + std::to_string(version) +
                     " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> kv;
  struct Decl {
    std::string name;
    std::size_t rows, cols;
  };
  std::vector<Decl> decls;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ps(line.substr(6));
      Decl d;
      if (!(ps >> d.name >> d.rows >> d.cols)) throw ParseError(origin + ": bad param line '" + line + "'");
      decls.push_back(d);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(origin + ": bad header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(origin + ": missing header key " + k);
    return it->second;
  };
  auto get_size = [&](const std::string& k) { return static_cast<std::size_t>(std::stoull(get(k))); };
  auto get_double = [&](const std::string& k) { return std::stod(get(k)); };

  Checkpoint c;
  try {
    c.stage = std::stoi(get("stage"));
    c.seed = std::stoull(get("seed"));
    c.epochs = get_size("epochs");
    c.encoder = {get_size("encoder.image_size"), get_size("encoder.patch_size"), get_size("encoder.width"),
                 get_size("encoder.layers"),     get_size("encoder.heads"),      get_size("encoder.mlp_hidden"),
                 get_size("encoder.head_hidden"), get_size("encoder.embed_dim"), get_double("encoder.ln_eps")};
    c.fusion = {get_size("fusion.blocks"), get_size("fusion.width"), get_size("fusion.heads"),
                get_size("fusion.mlp_hidden"), get_double("fusion.ln_eps")};
    c.loss = {get_double("loss.alpha_pos"), get_double("loss.alpha_neg"), get_double("loss.tau"),
              get_double("loss.margin")};
    const std::string& trace = get("loss_trace");
    std::istringstream ts(trace);
    for (std::string item; std::getline(ts, item, ',');) c.loss_trace.push_back(std::stod(item));
  } catch (const std::logic_error& e) {
    throw ParseError(origin + ": bad numeric header value (" + e.what() + ")");
  }
  if (c.stage != 1 && c.stage != 2) throw ParseError(origin + ": stage must be 1 or 2");

  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  for (const Decl& d : decls) {
    const std::size_t n = d.rows * d.cols;
    if (pos + 4 * n > bytes.size()) throw ParseError(origin + ": truncated data for " + d.name);
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = detail::read_f32_le(data + pos + 4 * i);
    pos += 4 * n;
    auto& store = d.name.rfind("fusion", 0) == 0 ? c.fusion_params : c.encoder_params;
    try {
      store.add(d.name, Matrix<float>(d.rows, d.cols, std::move(values)));
    } catch (const ConfigError& e) {
      throw ParseError(origin + ": " + e.what());
    }
  }
  if (pos != bytes.size()) throw ParseError(origin + ": trailing bytes after parameter data");
  try {
    c.encoder.validate();
    check_layout(c.encoder_params, init_encoder<float>(c.encoder, 0), "encoder");
    if (c.has_fusion()) {
      c.fusion.validate();
      check_layout(c.fusion_params, init_fusion<float>(c.fusion, 0), "fusion");
    }
  } catch (const Error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace ridgematch
