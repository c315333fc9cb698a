#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rbs/common.hpp"
#include "rbs/splitter.hpp"

namespace rbs {

// ---------------------------------------------------------------------------
// Reward scorer.
//
// The scorer factorizes into per-sequence encodings (mean of token
// embeddings) plus a pairing head, so a whole B x B score matrix costs B
// encodings and B^2 cheap combinations instead of B^2 forward passes over
// full sequences. Two heads are provided: a bilinear form u'Wv + b and a
// small tanh MLP over [u; v; u*v].
// ---------------------------------------------------------------------------

enum class ScorerArch { kBilinear, kMlp };

inline std::string to_string(ScorerArch a) {
  return a == ScorerArch::kBilinear ? "bilinear" : "mlp";
}

struct ScorerConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t embed_dim = 32;
  ScorerArch arch = ScorerArch::kBilinear;
  std::uint32_t hidden_dim = 64;  // mlp only
  double init_scale = 0.1;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("scorer: vocab_size must be positive");
    if (embed_dim == 0) throw ConfigError("scorer: embed_dim must be positive");
    if (arch == ScorerArch::kMlp && hidden_dim == 0) {
      throw ConfigError("scorer: hidden_dim must be positive for the mlp head");
    }
    if (!(init_scale > 0.0)) throw ConfigError("scorer: init_scale must be positive");
  }

  std::size_t embedding_count() const {
    return static_cast<std::size_t>(vocab_size) * embed_dim;
  }

  std::size_t param_count() const {
    const std::size_t d = embed_dim;
    if (arch == ScorerArch::kBilinear) {
      return embedding_count() + d * d + 1;  // E, W, bias
    }
    const std::size_t h = hidden_dim;
    return embedding_count() + h * 3 * d + h + h + 1;  // E, W1, b1, w2, b2
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "arch=" << to_string(arch) << '\n'
        << "vocab_size=" << vocab_size << '\n'
        << "embed_dim=" << embed_dim << '\n'
        << "hidden_dim=" << hidden_dim << '\n'
        << "init_scale=" << format_double(init_scale) << '\n';
    return out.str();
  }

  static ScorerConfig from_text(std::string_view text) {
    ScorerConfig cfg;
    std::istringstream lines{std::string(text)};
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("scorer config: malformed line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "arch") {
          if (value == "bilinear") cfg.arch = ScorerArch::kBilinear;
          else if (value == "mlp") cfg.arch = ScorerArch::kMlp;
          else throw DataError("scorer config: unknown arch '" + value + "'");
        } else if (key == "vocab_size") cfg.vocab_size = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "embed_dim") cfg.embed_dim = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "hidden_dim") cfg.hidden_dim = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "init_scale") cfg.init_scale = std::stod(value);
        else throw DataError("scorer config: unknown key '" + key + "'");
      } catch (const std::invalid_argument&) {
        throw DataError("scorer config: bad value for '" + key + "'");
      } catch (const std::out_of_range&) {
        throw DataError("scorer config: value out of range for '" + key + "'");
      }
    }
    cfg.validate();
    return cfg;
  }
};

/// Flat parameter vector plus its architecture descriptor.
///
/// Bilinear layout: [E (vocab x d, row-major)] [W (d x d)] [b]
/// Mlp layout:      [E] [W1 (h x 3d)] [b1 (h)] [w2 (h)] [b2]
struct ScorerParams {
  ScorerConfig config;
  std::vector<double> theta;

  std::span<const double> embeddings() const {
    return {theta.data(), config.embedding_count()};
  }
  std::span<double> embeddings() {
    return {theta.data(), config.embedding_count()};
  }
  const double* embedding_row(TokenId t) const {
    return theta.data() + static_cast<std::size_t>(t) * config.embed_dim;
  }
};

/// Embeddings and weights uniform in [-init_scale, +init_scale]; biases zero.
/// Deterministic in (config, seed).
inline ScorerParams init_params(const ScorerConfig& config, std::uint64_t seed) {
  config.validate();
  ScorerParams params;
  params.config = config;
  params.theta.assign(config.param_count(), 0.0);
  Rng rng(Rng::substream(seed, 0x5c02e5));
  const double s = config.init_scale;
  const std::size_t d = config.embed_dim;
  if (config.arch == ScorerArch::kBilinear) {
    const std::size_t weights_end = config.embedding_count() + d * d;  // final bias stays zero
    for (std::size_t i = 0; i < weights_end; ++i) params.theta[i] = rng.next_uniform(-s, s);
  } else {
    const std::size_t h = config.hidden_dim;
    const std::size_t w1_end = config.embedding_count() + h * 3 * d;
    for (std::size_t i = 0; i < w1_end; ++i) params.theta[i] = rng.next_uniform(-s, s);
    // b1 stays zero; w2 is a weight vector; b2 stays zero
    for (std::size_t i = 0; i < h; ++i) params.theta[w1_end + h + i] = rng.next_uniform(-s, s);
  }
  return params;
}

/// Mean of token embeddings over positions.
inline std::vector<double> encode(const ScorerParams& params, const TokenSequence& seq) {
  if (seq.empty()) throw DataError("encode: cannot encode an empty sequence");
  const std::size_t d = params.config.embed_dim;
  std::vector<double> out(d, 0.0);
  for (TokenId t : seq) {
    if (t >= params.config.vocab_size) {
      throw DataError("encode: token id " + std::to_string(t) + " >= vocab_size " +
                      std::to_string(params.config.vocab_size));
    }
    const double* row = params.embedding_row(t);
    for (std::size_t k = 0; k < d; ++k) out[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(seq.size());
  for (double& x : out) x *= inv;
  return out;
}

namespace detail {

/// Head value for already-encoded vectors u, v.
inline double score_encoded(const ScorerParams& params, std::span<const double> u,
                            std::span<const double> v) {
  const std::size_t d = params.config.embed_dim;
  const double* th = params.theta.data();
  if (params.config.arch == ScorerArch::kBilinear) {
    const double* W = th + params.config.embedding_count();
    const double b = th[params.config.param_count() - 1];
    double s = b;
    for (std::size_t i = 0; i < d; ++i) {
      double wv = 0.0;
      const double* Wrow = W + i * d;
      for (std::size_t j = 0; j < d; ++j) wv += Wrow[j] * v[j];
      s += u[i] * wv;
    }
    return s;
  }
  const std::size_t h = params.config.hidden_dim;
  const double* W1 = th + params.config.embedding_count();
  const double* b1 = W1 + h * 3 * d;
  const double* w2 = b1 + h;
  const double b2 = *(w2 + h);
  double s = b2;
  for (std::size_t i = 0; i < h; ++i) {
    const double* row = W1 + i * 3 * d;
    double pre = b1[i];
    for (std::size_t j = 0; j < d; ++j) {
      pre += row[j] * u[j] + row[d + j] * v[j] + row[2 * d + j] * u[j] * v[j];
    }
    s += w2[i] * std::tanh(pre);
  }
  return s;
}

}  // namespace detail

inline double score_pair(const ScorerParams& params, const TokenSequence& prefix,
                         const TokenSequence& suffix) {
  const std::vector<double> u = encode(params, prefix);
  const std::vector<double> v = encode(params, suffix);
  const double s = detail::score_encoded(params, u, v);
  if (!std::isfinite(s)) throw NumericError("score_pair produced a non-finite value");
  return s;
}

/// B x B score matrix, row-major; entry (i, j) scores prefix i against
/// suffix j, so the diagonal holds the true-continuation scores.
struct ScoreMatrix {
  std::size_t b = 0;
  std::vector<double> s;

  double at(std::size_t i, std::size_t j) const { return s[i * b + j]; }
  double& at(std::size_t i, std::size_t j) { return s[i * b + j]; }
};

/// Per-sequence encodings for one batch: prefix rows U and suffix rows V.
struct EncodedBatch {
  std::size_t b = 0;
  std::size_t d = 0;
  std::vector<double> u;  // b x d row-major
  std::vector<double> v;

  std::span<const double> u_row(std::size_t i) const { return {u.data() + i * d, d}; }
  std::span<const double> v_row(std::size_t i) const { return {v.data() + i * d, d}; }
};

inline EncodedBatch encode_batch(const ScorerParams& params,
                                 std::span<const PrefixSuffixPair> batch) {
  EncodedBatch enc;
  enc.b = batch.size();
  enc.d = params.config.embed_dim;
  enc.u.resize(enc.b * enc.d);
  enc.v.resize(enc.b * enc.d);
  for (std::size_t i = 0; i < enc.b; ++i) {
    const std::vector<double> u = encode(params, batch[i].prefix);
    const std::vector<double> v = encode(params, batch[i].suffix);
    std::copy(u.begin(), u.end(), enc.u.begin() + static_cast<std::ptrdiff_t>(i * enc.d));
    std::copy(v.begin(), v.end(), enc.v.begin() + static_cast<std::ptrdiff_t>(i * enc.d));
  }
  return enc;
}

inline ScoreMatrix score_matrix_from_encoded(const ScorerParams& params, const EncodedBatch& enc) {
  ScoreMatrix m;
  m.b = enc.b;
  m.s.resize(enc.b * enc.b);
  for (std::size_t i = 0; i < enc.b; ++i) {
    for (std::size_t j = 0; j < enc.b; ++j) {
      const double s = detail::score_encoded(params, enc.u_row(i), enc.v_row(j));
      if (!std::isfinite(s)) {
        throw NumericError("score_matrix: non-finite score at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
      m.at(i, j) = s;
    }
  }
  return m;
}

/// Each prefix and suffix is encoded once; the head runs on all B^2 pairs.
inline ScoreMatrix score_matrix(const ScorerParams& params,
                                std::span<const PrefixSuffixPair> batch) {
  if (batch.size() < 2) throw ConfigError("score_matrix: batch size must be at least 2");
  return score_matrix_from_encoded(params, encode_batch(params, batch));
}

// ---------------------------------------------------------------------------
// Checkpoints.
//   magic "RBSCKPT1" | u32le version | u32le config_len | config text |
//   u64le param_count | params f64le |
//   optional: u64le state_len | u64le step | m f64le[] | v f64le[]
// ---------------------------------------------------------------------------

/// Adam moment vectors plus the step counter; serialized with checkpoints so
/// training can resume bit-exactly.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'B', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ScorerParams& params,
                            const OptimizerState* state = nullptr) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32le(out, kCheckpointVersion);
  const std::string cfg = params.config.to_text();
  put_u32le(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  put_u64le(out, params.theta.size());
  for (double x : params.theta) put_f64le(out, x);
  if (state != nullptr) {
    if (state->m.size() != params.theta.size() || state->v.size() != params.theta.size()) {
      throw ConfigError("save_checkpoint: optimizer state length mismatch");
    }
    put_u64le(out, 8 + 16 * static_cast<std::uint64_t>(params.theta.size()));
    put_u64le(out, state->step);
    for (double x : state->m) put_f64le(out, x);
    for (double x : state->v) put_f64le(out, x);
  }
  atomic_write_file(path, out);
}

struct Checkpoint {
  ScorerParams params;
  std::optional<OptimizerState> state;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  BinaryReader r(data, path.string());
  if (r.bytes(sizeof(kCheckpointMagic)) !=
      std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw DataError(path.string() + ": bad checkpoint magic");
  }
  const std::uint32_t version = r.u32le();
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = r.u32le();
  Checkpoint ckpt;
  ckpt.params.config = ScorerConfig::from_text(r.bytes(cfg_len));
  const std::uint64_t n = r.u64le();
  if (n != ckpt.params.config.param_count()) {
    throw DataError(path.string() + ": parameter count " + std::to_string(n) +
                    " does not match the architecture (" +
                    std::to_string(ckpt.params.config.param_count()) + ")");
  }
  ckpt.params.theta.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ckpt.params.theta.push_back(r.f64le());
  if (!r.at_end()) {
    const std::uint64_t state_len = r.u64le();
    if (state_len != 8 + 16 * n) {
      throw DataError(path.string() + ": optimizer state block has unexpected length");
    }
    OptimizerState st;
    st.step = r.u64le();
    st.m.reserve(n);
    st.v.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) st.m.push_back(r.f64le());
    for (std::uint64_t i = 0; i < n; ++i) st.v.push_back(r.f64le());
    ckpt.state = std::move(st);
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after checkpoint data");
  return ckpt;
}

}  // namespace rbs
